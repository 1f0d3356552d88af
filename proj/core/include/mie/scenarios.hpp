#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mie/agent.hpp"
#include "mie/game.hpp"
#include "mie/system.hpp"

namespace mie {

// ===========================================================================
// Generic tabular scenario: agents with (F, G, H) operator models in a game
// ===========================================================================

class TabularScenario : public Scenario {
 public:
  TabularScenario(std::string kind, nlohmann::json config, TabularMarkovGame game, std::vector<AgentModel> models,
                  std::vector<MultilevelAgentState> initial_agents, bool episodic_reset = false);

  std::string kind() const override { return kind_; }
  nlohmann::json to_json() const override { return config_; }
  std::size_t num_agents() const override { return game_.num_agents(); }
  std::unique_ptr<Scenario> clone() const override;
  const TabularMarkovGame* game() const override { return &game_; }
  JointState initial_state(Rng& environment) const override;
  TickRecord advance(JointState& state, std::uint64_t t, RngStreams& rng,
                     const OperatorSchedule& schedule) const override;
  std::optional<JointState> expected_advance(const JointState& state) const override;
  std::vector<double> behavioral_gaps(const JointState& state) const override;
  std::vector<PerturbationTarget> perturbation_targets() const override;
  std::unique_ptr<Scenario> perturbed(const PerturbationSpec& p) const override;
  void perturb_state(JointState& state, const PerturbationSpec& p) const override;

  const std::vector<AgentModel>& models() const { return models_; }
  const std::vector<MultilevelAgentState>& initial_agents() const { return initial_agents_; }
  bool episodic_reset() const { return episodic_reset_; }

  /// Joint outcomes (|A| * |S|) above which expected_advance declines.
  static constexpr std::size_t kMaxEnumeratedOutcomes = 1 << 14;

 private:
  std::string kind_;
  nlohmann::json config_;
  TabularMarkovGame game_;
  std::vector<AgentModel> models_;
  std::vector<MultilevelAgentState> initial_agents_;
  bool episodic_reset_;
  std::vector<bool> masked_;

  std::vector<MultilevelAgentState> update_agents(const JointState& state, std::span<const std::size_t> actions,
                                                  std::size_t next_state, std::uint64_t t,
                                                  const OperatorSchedule& schedule,
                                                  std::vector<Observation>* observations) const;
};

std::vector<StochasticPolicy> joint_policy_of(const JointState& state);

// ===========================================================================
// Human-LLM co-adaptation toy model
// ===========================================================================

struct ToyCoAdaptConfig {
  double alpha_h = 0.2;
  double alpha_m = 0.3;
  double x0 = 0.9;
  double y0 = 0.1;

  void validate() const;
};

struct ToyStepResult {
  double x = 0.0;
  double y = 0.0;
  double utility = 0.0;  ///< U at the pre-update state
};

/// U = 1 - (x - y)^2; x' = x - 2 alpha_h (x - y); y' = y + alpha_m (x - y).
ToyStepResult toy_step(double x, double y, double alpha_h, double alpha_m);

struct ContractionVerdict {
  double kappa = 0.0;
  bool converges = false;
};

/// kappa = 1 - 2 alpha_h - alpha_m; the mismatch obeys d' = kappa d and
/// converges iff |kappa| < 1.
ContractionVerdict toy_contraction_factor(double alpha_h, double alpha_m);

/// Agent 0 (human) holds x as a one-dimensional gaussian belief mean, agent 1
/// (model) holds y. The mismatch d is carried in aux[0] and advanced as
/// d' = kappa d: recomputing x - y would lose all relative precision once
/// the mismatch drops below the rounding error of x and y.
class ToyCoAdaptScenario : public Scenario {
 public:
  explicit ToyCoAdaptScenario(ToyCoAdaptConfig config);

  std::string kind() const override { return "toy_coadapt"; }
  nlohmann::json to_json() const override;
  std::size_t num_agents() const override { return 2; }
  std::unique_ptr<Scenario> clone() const override;
  JointState initial_state(Rng& environment) const override;
  std::vector<std::string> scalar_names() const override { return {"x", "y", "U", "d"}; }
  TickRecord advance(JointState& state, std::uint64_t t, RngStreams& rng,
                     const OperatorSchedule& schedule) const override;
  std::optional<JointState> expected_advance(const JointState& state) const override;
  /// (x - y)^2 for both agents: the utility lost against the best reply.
  std::vector<double> behavioral_gaps(const JointState& state) const override;
  std::vector<PerturbationTarget> perturbation_targets() const override;
  std::unique_ptr<Scenario> perturbed(const PerturbationSpec& p) const override;
  void perturb_state(JointState& state, const PerturbationSpec& p) const override;
  void resync(JointState& state) const override;

  const ToyCoAdaptConfig& config() const { return config_; }
  JointState state_at(double x, double y) const;

 private:
  ToyCoAdaptConfig config_;
  std::array<bool, 2> masked_{false, false};
};

// ===========================================================================
// Repeated matrix games
// ===========================================================================

enum class LearnerKind { q_learner, fictitious_play, fixed };

struct LearnerConfig {
  LearnerKind kind = LearnerKind::q_learner;
  double alpha = 0.1;
  double beta = 5.0;
  /// 0 selects the harmonic 1/t belief step.
  double belief_rate = 0.0;
  int depth = 1;
  double td_discount = 0.0;
  std::vector<double> initial_q;
  /// Distribution for `fixed` learners (and the initial policy of others).
  std::vector<double> policy;
  /// Q-learners: weight of the belief-expected stage payoff added to Q in the softmax logits.
  double belief_weight = 1.0;
};

struct MatrixGameConfig {
  std::string name = "matching_pennies";
  double discount = 0.95;
  std::array<LearnerConfig, 2> agents;
};

/// Canonical single-state bimatrix games: matching_pennies (agent 0 matches,
/// +-1), prisoners_dilemma (C=0, D=1; T=5, R=3, P=1, S=0), coordination
/// (2 on the diagonal, 0 elsewhere).
TabularMarkovGame matrix_game(std::string_view name, double discount = 0.95);

std::unique_ptr<TabularScenario> build_matrix_game(const MatrixGameConfig& config);

/// Shorthand: both agents of kind `kind` with the given beta and alpha.
std::unique_ptr<TabularScenario> build_matrix_game(std::string_view name, double beta, double alpha,
                                                   LearnerKind kind = LearnerKind::q_learner);

// ===========================================================================
// Highway merge
// ===========================================================================

struct HighwayMergeConfig {
  std::size_t ramp_length = 4;
  std::size_t gap_levels = 4;
  std::size_t safe_gap = 2;
  std::size_t initial_gap = 0;
  double gap_noise = 0.0;
  double merge_reward = 1.0;
  double collision_penalty = -10.0;
  double time_cost = -0.01;
  double discount = 0.95;
  double alpha = 0.1;
  double beta = 5.0;
  bool episodic_reset = true;

  void validate() const;
};

namespace highway {
inline constexpr std::size_t kAccelerate = 0;
inline constexpr std::size_t kHold = 1;
inline constexpr std::size_t kYield = 2;
inline constexpr std::size_t kHuman = 0;
inline constexpr std::size_t kVehicle = 1;
}  // namespace highway

/// State index pos * gap_levels + gap for the human's remaining ramp cells
/// and the gap the vehicle leaves; two absorbing states follow: merged and
/// collided.
struct HighwayLayout {
  std::size_t ramp_length;
  std::size_t gap_levels;

  std::size_t state(std::size_t pos, std::size_t gap) const { return pos * gap_levels + gap; }
  std::size_t merged() const { return ramp_length * gap_levels; }
  std::size_t collided() const { return merged() + 1; }
  std::size_t num_states() const { return merged() + 2; }
};

TabularMarkovGame highway_merge_game(const HighwayMergeConfig& config);
std::unique_ptr<TabularScenario> build_highway_merge(const HighwayMergeConfig& config);

// ===========================================================================
// Brain-machine interface co-adaptation
// ===========================================================================

enum class TargetDistribution { rademacher, gaussian };

struct BmiConfig {
  std::size_t neural_dim = 1;
  std::size_t command_dim = 1;
  double alpha_h = 0.2;
  double alpha_m = 0.01;
  double noise = 0.0;         ///< std of additive neural noise
  double target_scale = 1.0;  ///< std of each target coordinate
  TargetDistribution target = TargetDistribution::rademacher;
  std::vector<double> encoder_init;  ///< neural_dim x command_dim; empty -> identity-like
  std::vector<double> decoder_init;  ///< command_dim x neural_dim; empty -> 0.5 x identity-like
  double belief_rate = 1.0;

  void validate() const;
};

/// Constants of the scalar error recursion
///   g' - 1 = (1 - alpha_h c_h)(1 - alpha_m c_m)(g - 1),  g = D E,
/// with c_h = s^2 D^2 and c_m = s^2 E^2 + noise^2 at the given mapping.
/// The constants move with the mapping, so the factor is a local
/// linearization; bmi_mean_recursion follows the full trajectory.
struct BmiRecursion {
  double c_h = 0.0;
  double c_m = 0.0;
  double factor(double alpha_h, double alpha_m) const { return (1.0 - alpha_h * c_h) * (1.0 - alpha_m * c_m); }
  bool stable(double alpha_h, double alpha_m) const;
};

/// Recursion constants at the initial mapping, or at a given encoder and
/// decoder (row-major, shapes as in BmiConfig).
BmiRecursion bmi_recursion(const BmiConfig& config);
BmiRecursion bmi_recursion(const BmiConfig& config, const std::vector<double>& encoder,
                           const std::vector<double>& decoder);

/// Iterates the expected update (second moments s^2 I and noise^2 I in place
/// of the sampled target and noise) from the initial mapping. Exact for
/// noiseless Rademacher targets, where c c^T = s^2 I on every tick.
struct BmiPrediction {
  bool converges = false;
  bool diverges = false;
  std::size_t steps = 0;
  double gain_error = 0.0;
  std::vector<double> encoder;
  std::vector<double> decoder;
};

BmiPrediction bmi_mean_recursion(const BmiConfig& config, std::size_t max_steps = 20'000, double tolerance = 1e-9);

/// Agent 0 (brain) has theta = encoder E, belief = model of the decoder.
/// Agent 1 (machine) has theta = decoder D, belief = model of the encoder.
/// Each tick: target c, activity n = E c + v, command u = D n; the brain
/// takes a gradient step on |u - c|^2 / 2 in E (rate alpha_h) using its
/// decoder model, then the decoder takes an LMS step (rate alpha_m) on the
/// updated activity; beliefs then track the partner's mapping.
class BmiCoAdaptScenario : public Scenario {
 public:
  explicit BmiCoAdaptScenario(BmiConfig config);

  std::string kind() const override { return "bmi_coadapt"; }
  nlohmann::json to_json() const override;
  std::size_t num_agents() const override { return 2; }
  std::unique_ptr<Scenario> clone() const override;
  JointState initial_state(Rng& environment) const override;
  std::vector<std::string> scalar_names() const override { return {"tracking_error", "gain_error"}; }
  TickRecord advance(JointState& state, std::uint64_t t, RngStreams& rng,
                     const OperatorSchedule& schedule) const override;
  /// Gaps in expected squared tracking error per tick.
  std::vector<double> behavioral_gaps(const JointState& state) const override;
  std::vector<PerturbationTarget> perturbation_targets() const override;
  std::unique_ptr<Scenario> perturbed(const PerturbationSpec& p) const override;
  void perturb_state(JointState& state, const PerturbationSpec& p) const override;

  const BmiConfig& config() const { return config_; }

  /// ||D E - I||_F of a joint state.
  double gain_error(const JointState& state) const;

 private:
  BmiConfig config_;
  std::array<bool, 2> masked_{false, false};
};

enum class StabilityLabel { converged, diverged, inconclusive };
std::string_view to_string(StabilityLabel label);

/// Empirical label from a scalar error series: converged when the final
/// value falls below `ratio` times the first, diverged above 1/ratio or on
/// non-finite values.
StabilityLabel classify_error_series(std::span<const double> errors, double ratio = 1e-3);

// ===========================================================================
// Pathological belief equilibria
// ===========================================================================

enum class PathologyVariant { depression, anxiety };
enum class PolicyMode { softmax, pure };

struct PathologicalConfig {
  PathologyVariant variant = PathologyVariant::depression;
  /// Reward probability (depression) or threat probability (anxiety).
  double true_probability = 0.8;
  double belief_bias = 0.5;
  double belief_rate = 0.1;
  double initial_belief = 0.5;
  double beta = 10.0;
  double alpha = 0.1;
  double reward_gain = 1.0;
  double safe_reward = 0.5;
  double approach_gain = 1.0;
  double threat_cost = 2.0;
  double avoid_reward = 0.2;
  PolicyMode policy_mode = PolicyMode::softmax;
  double discount = 0.95;

  static PathologicalConfig defaults(PathologyVariant variant);
  void validate() const;
};

namespace pathology {
inline constexpr std::size_t kEngage = 0;    ///< engage / approach
inline constexpr std::size_t kWithdraw = 1;  ///< withdraw / avoid
}  // namespace pathology

/// Two-armed bandit. State records the last outcome (1 = reward for
/// depression, 1 = threat for anxiety).
///
/// depression: the outcome is seen every tick and the belief follows
///   b' = clamp((1 - rate) b + rate (o - bias), 0, 1)
/// anxiety: the threat outcome is seen only after approaching and the
///   belief follows b' = (1 - rate) b + rate o; avoidance leaves it frozen.
class PathologicalScenario : public Scenario {
 public:
  explicit PathologicalScenario(PathologicalConfig config);

  std::string kind() const override { return "pathological"; }
  nlohmann::json to_json() const override;
  std::size_t num_agents() const override { return 1; }
  std::unique_ptr<Scenario> clone() const override;
  const TabularMarkovGame* game() const override { return &game_; }
  JointState initial_state(Rng& environment) const override;
  std::vector<std::string> scalar_names() const override { return {"belief", "p_engage"}; }
  TickRecord advance(JointState& state, std::uint64_t t, RngStreams& rng,
                     const OperatorSchedule& schedule) const override;
  std::optional<JointState> expected_advance(const JointState& state) const override;
  std::vector<double> behavioral_gaps(const JointState& state) const override;
  std::vector<PerturbationTarget> perturbation_targets() const override;
  std::unique_ptr<Scenario> perturbed(const PerturbationSpec& p) const override;
  void perturb_state(JointState& state, const PerturbationSpec& p) const override;

  const PathologicalConfig& config() const { return config_; }

  /// The belief revision for one observation (nullopt when unseen).
  double belief_update(double belief, std::optional<double> outcome) const;
  /// Belief fixed point of the depression update, max(p - bias, 0) clamped to [0, 1].
  double analytic_belief_fixed_point() const;
  /// Values the agent assigns to engage / withdraw under belief b.
  std::array<double, 2> perceived_values(double belief) const;

 private:
  void apply_outcome(JointState& state, std::size_t action, std::size_t next_state, bool observed, std::uint64_t t,
                     const OperatorSchedule& schedule) const;

  PathologicalConfig config_;
  TabularMarkovGame game_;
  bool masked_ = false;
};

// ===========================================================================
// Factory
// ===========================================================================

/// Builds a scenario from its JSON configuration (`kind` discriminator).
/// Throws ConfigError naming the offending key.
std::unique_ptr<Scenario> make_scenario(const nlohmann::json& config);

std::vector<std::string> scenario_kinds();

}  // namespace mie
