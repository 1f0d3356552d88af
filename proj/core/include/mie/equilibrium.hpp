#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mie/sim.hpp"
#include "mie/system.hpp"

namespace mie {

struct ToleranceConfig {
  double neural = 1e-3;
  double cognitive = 1e-3;
  double policy = 1e-3;
  double brgap = 1e-3;
  std::size_t window = 5;
  std::size_t samples = 1000;
  double neutral_band = 1e-3;

  void validate() const;
};

nlohmann::json tolerances_to_json(const ToleranceConfig& tol);
ToleranceConfig tolerances_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Mean-field operator
// ---------------------------------------------------------------------------

/// Phi-bar: the expected one-step update.
///
/// When the scenario can enumerate its randomness (`exact_when_available`)
/// the expectation is exact. Otherwise it is the mean over `samples`
/// independent applications of Phi, sample m always drawing from substream
/// m of `seed` (common random numbers across calls).
struct MeanFieldOptions {
  std::size_t samples = 1000;
  std::uint64_t seed = 0;
  bool exact_when_available = true;
};

JointState mean_field_step(const Scenario& scenario, const JointState& state, const MeanFieldOptions& options);
std::vector<double> mean_field_map(const Scenario& scenario, const JointState& like, std::span<const double> x,
                                   const MeanFieldOptions& options);

// ---------------------------------------------------------------------------
// Residuals and gaps
// ---------------------------------------------------------------------------

struct ResidualEstimate {
  std::vector<double> value;           ///< per agent
  std::vector<double> standard_error;  ///< per agent; 0 for exact expectations
};

/// ||E[G_i(theta_i, delta)] - theta_i||_2 with (b, pi) frozen at `state`.
ResidualEstimate neural_residual(const Scenario& scenario, const JointState& state, std::size_t samples,
                                 std::uint64_t seed, bool exact_when_available = true);

/// ||E[F_i(b_i, o)] - b_i||_1 under the observation distribution induced by `state`.
ResidualEstimate cognitive_residual(const Scenario& scenario, const JointState& state, std::size_t samples,
                                    std::uint64_t seed, bool exact_when_available = true);

/// max_pi V_i(pi, pi_-i) - V_i(pi_i, pi_-i) weighted by the initial
/// distribution. Clamped at zero.
double brgap(const TabularMarkovGame& game, std::span<const StochasticPolicy> joint_policy, std::size_t agent);
double brgap(const TabularMarkovGame& game, std::span<const StochasticPolicy> joint_policy, std::size_t agent,
             double discount);

enum class Verdict { full_mie, marginal_mie, none };
std::string_view to_string(Verdict v);

struct MieInputs {
  std::vector<double> neural;
  std::vector<double> cognitive;
  std::vector<double> brgap;
};

struct EquilibriumReport {
  std::vector<double> neural_residual;
  std::vector<double> cognitive_residual;
  std::vector<double> brgap;
  std::optional<double> distance;
  /// i: neural stationarity, ii: cognitive self-consistency, iii: behavioral best response.
  std::array<bool, 3> conditions{};
  Verdict verdict = Verdict::none;
  ToleranceConfig tolerances;

  /// e.g. "ii+iii".
  std::string satisfied() const;
};

EquilibriumReport check_mie(const MieInputs& inputs, const ToleranceConfig& tol);

nlohmann::json equilibrium_report_to_json(const EquilibriumReport& report);

// ---------------------------------------------------------------------------
// Distance to equilibrium and drift
// ---------------------------------------------------------------------------

struct DistanceWeights {
  double theta = 1.0;
  double belief = 1.0;
  double policy = 1.0;
  double brgap = 1.0;
};

nlohmann::json weights_to_json(const DistanceWeights& w);
DistanceWeights weights_from_json(const nlohmann::json& j);

/// E_t between the snapshot at tick t and the next snapshot. The gap term
/// is evaluated at the snapshot at t. Throws InsufficientDataError if either
/// snapshot is missing.
double distance_to_equilibrium(const InteractionLog& log, std::uint64_t t, const DistanceWeights& weights,
                               const Scenario& scenario);

enum class Level { theta, belief, policy };
std::string_view to_string(Level level);

/// Step norms between consecutive snapshots for one level.
std::vector<double> level_step_norms(const InteractionLog& log, Level level);

/// Earliest snapshot tick from which the level's step norm stays below
/// `tol` for `window` consecutive snapshot intervals.
std::optional<std::uint64_t> drift_detector(const InteractionLog& log, Level level, double tol, std::size_t window);

// ---------------------------------------------------------------------------
// Fixed points and stability
// ---------------------------------------------------------------------------

struct FixedPointOptions {
  MeanFieldOptions mean_field;
  double damping = 1.0;
  double step_tolerance = 1e-8;
  std::size_t max_iterations = 10'000;
  double divergence_threshold = 1e6;
};

struct FixedPointResult {
  JointState candidate;
  std::vector<double> step_norms;
  std::size_t iterations = 0;  ///< iterations that moved the state
  bool converged = false;
  bool diverged = false;
  /// ||Phi-bar(x*) - x*||_2 at the returned candidate.
  double residual = 0.0;
};

FixedPointResult find_fixed_point(const Scenario& scenario, const JointState& start, const FixedPointOptions& options);

struct JacobianEstimate {
  Eigen::MatrixXd matrix;
  /// max |J_h - J_2h| / 3, a Richardson estimate of the truncation error.
  double error_estimate = 0.0;
};

inline constexpr std::size_t kMaxJacobianDimension = 200;

/// Central differences of the flattened mean-field map at `at`.
JacobianEstimate mean_field_jacobian(const Scenario& scenario, const JointState& at, double h,
                                     const MeanFieldOptions& options);

enum class StabilityClass { stable, unstable, neutral, inconclusive };
std::string_view to_string(StabilityClass c);

struct StabilityReport {
  std::vector<double> point;
  Eigen::MatrixXd jacobian;
  std::vector<std::complex<double>> eigenvalues;
  /// Largest |lambda| among eigenvalues outside the neutral band (0 if none).
  double spectral_radius = 0.0;
  std::size_t neutral_count = 0;
  StabilityClass classification = StabilityClass::inconclusive;
};

/// Eigenvalues with |lambda| in [1 - band, 1 + band] are neutral.
/// stable: all others inside the unit circle and none neutral;
/// neutral: all others inside and at least one neutral;
/// unstable: any |lambda| > 1 + band.
StabilityReport classify_stability(const Eigen::MatrixXd& jacobian, double neutral_band);

nlohmann::json stability_report_to_json(const StabilityReport& report);

// ---------------------------------------------------------------------------
// Basins of attraction
// ---------------------------------------------------------------------------

struct GridAxis {
  std::size_t coordinate = 0;  ///< index into the flattened state
  double lo = 0.0;
  double hi = 1.0;
  std::size_t count = 1;

  double value(std::size_t k) const { return count == 1 ? lo : lo + (hi - lo) * double(k) / double(count - 1); }
};

inline constexpr int kLabelDiverged = -1;
inline constexpr int kLabelNotConverged = -2;

struct BasinCell {
  std::vector<double> coords;
  int label = kLabelNotConverged;
  std::size_t convergence_time = 0;
  std::vector<double> endpoint;
};

struct BasinMap {
  std::vector<GridAxis> axes;
  std::vector<BasinCell> cells;
  std::vector<std::vector<double>> attractors;
};

struct BasinOptions {
  FixedPointOptions fixed_point;
  double merge_tolerance = 1e-4;
  /// Coordinates compared when merging endpoints; empty compares all.
  std::vector<std::size_t> merge_on;
  std::size_t jobs = 1;
};

/// Cells vary the listed coordinates (at most 3) of `base`; attractors are
/// merged in cell order, so labels do not depend on scheduling.
BasinMap basin_map(const Scenario& scenario, const JointState& base, const std::vector<GridAxis>& axes,
                   const BasinOptions& options);

nlohmann::json basin_map_to_json(const BasinMap& map);
void write_basin_csv(const BasinMap& map, std::ostream& out);

}  // namespace mie
