#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mie/rng.hpp"

namespace mie {

/// One action index per agent.
using JointAction = std::vector<std::size_t>;

/// Dense guard: |S| * prod_i |A_i| may not exceed this.
inline constexpr std::size_t kMaxTensorEntries = 10'000'000;

/// Per-state action distributions of a single agent, stored row-major
/// (`probs[s * num_actions + a]`).
struct StochasticPolicy {
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::vector<double> probs;

  static StochasticPolicy uniform(std::size_t num_states, std::size_t num_actions);
  static StochasticPolicy deterministic(std::size_t num_states, std::size_t num_actions,
                                        std::span<const std::size_t> choice);

  double operator()(std::size_t s, std::size_t a) const { return probs[s * num_actions + a]; }
  double& operator()(std::size_t s, std::size_t a) { return probs[s * num_actions + a]; }
  std::span<const double> row(std::size_t s) const { return {probs.data() + s * num_actions, num_actions}; }
  std::span<double> row(std::size_t s) { return {probs.data() + s * num_actions, num_actions}; }

  bool operator==(const StochasticPolicy&) const = default;
};

/// Throws UsageError unless every row is a distribution within `tolerance`.
void require_distribution_rows(const StochasticPolicy& policy, double tolerance, const std::string& what);

/// Finite-state, finite-action N-agent stochastic game.
///
/// Joint actions are flattened mixed-radix with agent 0 most significant.
/// `transition[(s * J + j) * S + s']` and `rewards[(s * J + j) * N + i]`
/// where J is the number of joint actions.
struct TabularMarkovGame {
  std::size_t num_states = 0;
  std::vector<std::size_t> actions_per_agent;
  std::vector<double> transition;
  std::vector<double> rewards;
  double discount = 0.95;
  std::vector<double> initial_dist;

  /// Zero-filled tensors of the right shape, initial state 0.
  static TabularMarkovGame zeros(std::size_t num_states, std::vector<std::size_t> actions_per_agent,
                                 double discount = 0.95);

  std::size_t num_agents() const { return actions_per_agent.size(); }
  std::size_t num_joint_actions() const;
  std::size_t joint_index(std::span<const std::size_t> actions) const;
  JointAction joint_action(std::size_t index) const;

  double probability(std::size_t s, std::size_t joint, std::size_t next) const {
    return transition[(s * num_joint_actions() + joint) * num_states + next];
  }
  double& probability(std::size_t s, std::size_t joint, std::size_t next) {
    return transition[(s * num_joint_actions() + joint) * num_states + next];
  }
  std::span<const double> transition_row(std::size_t s, std::size_t joint) const {
    return {transition.data() + (s * num_joint_actions() + joint) * num_states, num_states};
  }
  double reward(std::size_t s, std::size_t joint, std::size_t agent) const {
    return rewards[(s * num_joint_actions() + joint) * num_agents() + agent];
  }
  double& reward(std::size_t s, std::size_t joint, std::size_t agent) {
    return rewards[(s * num_joint_actions() + joint) * num_agents() + agent];
  }

  /// True when every joint action keeps the game in `s` with probability 1.
  bool is_absorbing(std::size_t s) const;
};

struct Violation {
  std::string code;  // row_sum, negative_probability, initial_dist, non_finite_reward, shape, discount, size_guard
  std::size_t state = 0;
  JointAction actions;
  std::string message;
};

struct ValidationResult {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  std::string summary() const;
};

ValidationResult validate_game(const TabularMarkovGame& game);

struct StepResult {
  std::size_t next_state = 0;
  std::vector<double> rewards;
};

/// Sample s' ~ P(.|s,a) and return r(s,a) for every agent.
StepResult step(const TabularMarkovGame& game, std::size_t s, std::span<const std::size_t> actions, Rng& rng);

/// Single-agent MDP with `transition[(s * A + a) * S + s']`, `reward[s * A + a]`.
struct Mdp {
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::vector<double> transition;
  std::vector<double> reward;
  double discount = 0.95;
  std::vector<double> initial_dist;

  double probability(std::size_t s, std::size_t a, std::size_t next) const {
    return transition[(s * num_actions + a) * num_states + next];
  }
  std::span<const double> transition_row(std::size_t s, std::size_t a) const {
    return {transition.data() + (s * num_actions + a) * num_states, num_states};
  }
  double reward_of(std::size_t s, std::size_t a) const { return reward[s * num_actions + a]; }
};

/// MDP faced by `agent` when every other agent plays its entry of
/// `joint_policy` (the agent's own entry is ignored). Exact marginalization
/// over opponent joint actions; no renormalization.
Mdp single_agent_mdp(const TabularMarkovGame& game, std::size_t agent,
                     std::span<const StochasticPolicy> joint_policy);

/// JSON layout: `states`, `actions_per_agent`, `transition[s][a_0]..[a_{N-1}][s']`,
/// `rewards[s][a_0]..[a_{N-1}][i]`, `discount`, `initial_dist`.
nlohmann::json game_to_json(const TabularMarkovGame& game);

/// Parses and validates; throws ConfigError on shape problems or any violation.
TabularMarkovGame game_from_json(const nlohmann::json& j);

TabularMarkovGame load_game_file(const std::string& path);

}  // namespace mie
