#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mie/game.hpp"
#include "mie/rng.hpp"

namespace mie {

// ---------------------------------------------------------------------------
// Level states
// ---------------------------------------------------------------------------

/// Neural level: parameter vector and its learning rate.
struct NeuralParams {
  std::vector<double> values;
  double learning_rate = 0.1;

  bool operator==(const NeuralParams&) const = default;
};

enum class BeliefKind { categorical, gaussian };

/// Cognitive level.
///
/// Categorical beliefs are distributions over latent hypotheses (opponent
/// actions or opponent types). Gaussian beliefs carry a mean and a row-major
/// covariance. `depth` is the level-k nesting: 0 means a static prior that is
/// never revised, 1 a belief about the opponent, 2 adds `nested[0]`, the
/// agent's model of the opponent's belief about the agent itself.
struct BeliefState {
  BeliefKind kind = BeliefKind::categorical;
  std::vector<double> probs;
  std::vector<double> mean;
  std::vector<double> covariance;
  /// Evidence count for harmonic-rate (1/n) updates.
  double count = 0.0;
  int depth = 1;
  std::vector<BeliefState> nested;

  static BeliefState categorical(std::vector<double> probs, int depth = 1);
  static BeliefState uniform(std::size_t n, int depth = 1);
  static BeliefState gaussian(std::vector<double> mean, std::vector<double> covariance = {});

  /// The probability vector or the mean.
  std::span<const double> values() const;
  std::span<double> values();

  bool operator==(const BeliefState&) const = default;
};

/// Maximum supported level-k depth.
inline constexpr int kMaxBeliefDepth = 2;

void validate_belief(const BeliefState& belief);

enum class PolicyKind { tabular, softmax_of_q };

/// Behavioral level. `table` always holds the current action distributions;
/// for softmax_of_q it is the cache recomputed by policy_refresh_H.
struct Policy {
  PolicyKind kind = PolicyKind::tabular;
  StochasticPolicy table;
  double beta = 1.0;
  /// Weight of the belief-expected payoff inside the softmax logits.
  double belief_weight = 0.0;

  bool operator==(const Policy&) const = default;
};

void validate_policy(const Policy& policy);

/// x^i = (theta, b, pi).
struct MultilevelAgentState {
  NeuralParams theta;
  BeliefState belief;
  Policy policy;

  bool operator==(const MultilevelAgentState&) const = default;
};

/// What one agent sees after a tick. An empty optional is a masked field.
struct Observation {
  std::optional<std::size_t> state;
  std::optional<std::size_t> next_state;
  /// Actions of all other agents, in agent order.
  std::optional<std::vector<std::size_t>> opponent_actions;
  std::optional<double> reward;
  /// Scenario-specific scalar cue (outcome indicator, partner's expressed value).
  std::optional<double> signal;

  bool operator==(const Observation&) const = default;
};

/// Scalar learning signal and the parameter index it applies to.
struct LearningSignal {
  double delta = 0.0;
  std::size_t index = 0;
};

// ---------------------------------------------------------------------------
// Operator configuration for agents living in a TabularMarkovGame
// ---------------------------------------------------------------------------

enum class BeliefRule {
  none,                 ///< F is the identity
  bayes_types,          ///< posterior over opponent types, p(o | xi) = type_xi(a_opp | s)
  empirical_frequency,  ///< running frequency of the opponent's actions
};

enum class NeuralRule { none, q_learning };

enum class PolicyRule {
  fixed,                 ///< H is the identity
  softmax_q,             ///< pi ∝ exp(beta (Q + w * belief payoff))
  smooth_best_response,  ///< pi ∝ exp(beta * E_{xi ~ b}[payoff])
};

struct AgentModel {
  BeliefRule belief_rule = BeliefRule::empirical_frequency;
  NeuralRule neural_rule = NeuralRule::q_learning;
  PolicyRule policy_rule = PolicyRule::softmax_q;
  /// Discount inside the TD target; independent of the game's discount.
  double td_discount = 0.0;
  /// Constant step for empirical_frequency; 0 selects the harmonic 1/(n+1).
  double belief_rate = 0.0;
  /// Hypotheses for bayes_types, one policy per opponent type (2-agent games).
  std::vector<StochasticPolicy> opponent_types;
  bool observe_opponent = true;
  bool observe_reward = true;
};

struct OperatorSchedule {
  std::uint64_t belief_period = 1;
  std::uint64_t neural_period = 1;
  std::uint64_t policy_period = 1;

  bool belief_due(std::uint64_t t) const { return t % belief_period == 0; }
  bool neural_due(std::uint64_t t) const { return t % neural_period == 0; }
  bool policy_due(std::uint64_t t) const { return t % policy_period == 0; }

  bool operator==(const OperatorSchedule&) const = default;
};

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

/// Softmax with max-subtraction.
std::vector<double> softmax(std::span<const double> logits, double beta);

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

std::size_t act(const MultilevelAgentState& agent, std::size_t s, Rng& rng);

/// Bayes rule b'(xi) ∝ b(xi) p(o | xi). A fully masked observation returns
/// the belief unchanged. For depth 2 beliefs the nested belief is revised
/// with `nested_likelihood` when one is supplied.
BeliefState belief_update_F(const BeliefState& belief, const Observation& o, std::span<const double> likelihood,
                            std::span<const double> nested_likelihood = {});

/// Frequency revision b' = b + eta (e_k - b), eta = rate or 1/(count+1).
BeliefState frequency_update(const BeliefState& belief, std::size_t observed, double rate);

/// theta' = theta + alpha * delta at signal.index.
NeuralParams neural_update_G(const NeuralParams& theta, const LearningSignal& signal);

/// delta = r + gamma max_a' Q(s', a') - Q(s, a) for a row-major Q table.
LearningSignal td_error(const NeuralParams& q, std::size_t num_actions, std::size_t s, std::size_t a, double reward,
                        std::size_t next_state, double gamma);

/// Distribution over the single opponent's action in state s implied by
/// the agent's belief (2-agent games).
std::vector<double> predicted_opponent_distribution(const BeliefState& belief, const AgentModel& model,
                                                    const TabularMarkovGame& game, std::size_t agent,
                                                    std::size_t s, double beta);

/// Expected stage payoff of each own action against an opponent action
/// distribution (2-agent games).
std::vector<double> expected_stage_payoffs(const TabularMarkovGame& game, std::size_t agent, std::size_t s,
                                           std::span<const double> opponent);

/// Recompute pi from (theta, b) according to the model's policy rule.
Policy policy_refresh_H(const Policy& policy, const NeuralParams& theta, const BeliefState& belief,
                        const AgentModel& model, const TabularMarkovGame& game, std::size_t agent);

/// Observation of agent `agent` after the joint transition, honoring masks.
Observation observe(const AgentModel& model, std::size_t agent, std::size_t s, std::span<const std::size_t> actions,
                    std::span<const double> rewards, std::size_t next_state);

/// F, G and H for one agent given an already realized transition.
MultilevelAgentState update_agent(const MultilevelAgentState& agent, const AgentModel& model,
                                  const TabularMarkovGame& game, std::size_t index, const Observation& o,
                                  std::size_t own_action, std::uint64_t t, const OperatorSchedule& schedule);

struct PhiRecord {
  std::size_t state = 0;
  JointAction actions;
  std::vector<double> rewards;
  std::size_t next_state = 0;
  std::vector<Observation> observations;
};

struct PhiResult {
  std::size_t next_state = 0;
  std::vector<MultilevelAgentState> agents;
  PhiRecord record;
};

/// Deterministic half of Phi: everything after actions and s' are known.
std::vector<MultilevelAgentState> apply_transition(const TabularMarkovGame& game, std::span<const AgentModel> models,
                                                   std::span<const MultilevelAgentState> agents, std::size_t s,
                                                   std::span<const std::size_t> actions, std::size_t next_state,
                                                   std::uint64_t t, const OperatorSchedule& schedule,
                                                   std::vector<Observation>* observations = nullptr);

/// One tick: act -> environment -> observe -> F -> G -> H.
PhiResult joint_step_Phi(const TabularMarkovGame& game, std::span<const AgentModel> models,
                         std::span<const MultilevelAgentState> agents, std::size_t s, RngStreams& rng,
                         std::uint64_t t = 0, const OperatorSchedule& schedule = {});

}  // namespace mie
