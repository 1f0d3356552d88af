#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mie/equilibrium.hpp"
#include "mie/game.hpp"
#include "mie/sim.hpp"

namespace mie {

// ---------------------------------------------------------------------------
// Behavioral level
// ---------------------------------------------------------------------------

struct EmpiricalPolicy {
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::vector<std::size_t> counts;  ///< N(s, a), row-major
  /// (N(s,a) + c) / (sum_a' N(s,a') + c |A|); rows of undefined states are uniform placeholders.
  StochasticPolicy distribution;
  std::vector<bool> defined;  ///< false for unvisited states when c = 0
  double smoothing = 0.0;
};

EmpiricalPolicy empirical_policy(const InteractionLog& log, std::size_t agent, double smoothing = 0.0);

// ---------------------------------------------------------------------------
// Cognitive level
// ---------------------------------------------------------------------------

struct LinearGaussianModel {
  Eigen::MatrixXd transition;         ///< A
  Eigen::MatrixXd observation;        ///< H
  Eigen::MatrixXd process_noise;      ///< Q
  Eigen::MatrixXd observation_noise;  ///< R
  Eigen::VectorXd initial_mean;
  Eigen::MatrixXd initial_covariance;

  void validate() const;
};

struct KalmanResult {
  std::vector<Eigen::VectorXd> means;        ///< filtered, one per observation
  std::vector<Eigen::MatrixXd> covariances;  ///< filtered
  std::vector<Eigen::MatrixXd> gains;
  double log_likelihood = 0.0;
};

/// Predict/update recursion (x_t = A x_{t-1} + w, y_t = H x_t + v) with
/// Joseph-form covariance update, symmetrized each step. Throws
/// NumericalError when an innovation covariance is singular beyond tolerance.
KalmanResult kalman_belief_filter(const LinearGaussianModel& model, const std::vector<Eigen::VectorXd>& observations);

struct Divergence {
  double value = 0.0;  ///< nats; +inf when flagged
  bool infinite = false;
};

/// KL(p || q) in nats.
Divergence kl_divergence(std::span<const double> p, std::span<const double> q);

/// KL(pi_hat_opponent(.|s) || b_hat): observed opponent policy against the
/// agent's belief.
Divergence belief_policy_divergence(std::span<const double> belief, const EmpiricalPolicy& opponent, std::size_t s);

struct DepthComparison {
  std::vector<int> depths;
  std::vector<double> holdout_log_likelihood;  ///< cumulative, per depth
  std::vector<double> fitted_beta;
  std::vector<double> fitted_rate;  ///< 0 means harmonic
  std::size_t train_ticks = 0;
  std::size_t holdout_ticks = 0;
  int best_depth = 0;
};

/// Predicts the opponent of `agent` one step ahead under level-k models:
/// depth 0 a static mixed strategy, depth 1 a smooth fictitious player
/// responding to the agent's action frequencies, depth 2 an opponent that
/// best-responds to its prediction of the agent as a smooth fictitious
/// player. Parameters are fitted on the training prefix; scores are
/// cumulative log-likelihoods on the last `holdout_fraction` of ticks.
DepthComparison belief_depth_comparison(const InteractionLog& log, const TabularMarkovGame& game, std::size_t agent,
                                        const std::vector<int>& depths, double holdout_fraction);

// ---------------------------------------------------------------------------
// Neural level
// ---------------------------------------------------------------------------

struct SubspaceResult {
  std::vector<double> correlations;  ///< descending
  Eigen::MatrixXd x_projection;      ///< dim_x x k
  Eigen::MatrixXd y_projection;      ///< dim_y x k
  Eigen::MatrixXd x_shared;          ///< T x k centered trajectories in the shared subspace
  Eigen::MatrixXd y_shared;
  double ridge = 0.0;
};

/// Canonical correlation analysis by whitening and SVD. Rows are time
/// points. `ridge` < 0 selects the default: none when both auto-covariances
/// are well conditioned, otherwise 1e-6 * trace / dim.
SubspaceResult cca_shared_subspace(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, std::size_t k,
                                   double ridge = -1.0);

// ---------------------------------------------------------------------------
// Convergence summary
// ---------------------------------------------------------------------------

struct ConvergenceReport {
  std::optional<std::uint64_t> theta_tick;
  std::optional<std::uint64_t> belief_tick;
  std::optional<std::uint64_t> policy_tick;
  std::vector<bool> tracked;  ///< theta, belief, policy: level has nonzero dimension
  /// Earliest snapshot tick from which every tracked level is stable for the window.
  std::optional<std::uint64_t> joint_tick;
  std::vector<std::uint64_t> distance_ticks;
  std::vector<double> distance;  ///< E_t at each snapshot with a successor
};

/// Drift ticks stay empty when the log has too few snapshots for the window.
ConvergenceReport convergence_report(const InteractionLog& log, const ToleranceConfig& tol,
                                     const DistanceWeights& weights, const Scenario& scenario);

nlohmann::json convergence_report_to_json(const ConvergenceReport& report);

}  // namespace mie
