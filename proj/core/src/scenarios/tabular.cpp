#include <cmath>

#include "mie/equilibrium.hpp"
#include "mie/errors.hpp"
#include "mie/scenarios.hpp"

namespace mie {

TabularScenario::TabularScenario(std::string kind, nlohmann::json config, TabularMarkovGame game,
                                 std::vector<AgentModel> models, std::vector<MultilevelAgentState> initial_agents,
                                 bool episodic_reset)
    : kind_(std::move(kind)),
      config_(std::move(config)),
      game_(std::move(game)),
      models_(std::move(models)),
      initial_agents_(std::move(initial_agents)),
      episodic_reset_(episodic_reset),
      masked_(game_.num_agents(), false) {
  const auto validation = validate_game(game_);
  if (!validation.ok()) throw ConfigError("game", validation.summary());
  if (models_.size() != game_.num_agents() || initial_agents_.size() != game_.num_agents())
    throw ConfigError("agents", "one model and initial state per agent required");
  for (std::size_t i = 0; i < initial_agents_.size(); ++i) {
    const auto& a = initial_agents_[i];
    if (a.policy.table.num_states != game_.num_states || a.policy.table.num_actions != game_.actions_per_agent[i])
      throw ConfigError("agents", "policy of agent " + std::to_string(i) + " does not match the game");
    try {
      validate_policy(a.policy);
      validate_belief(a.belief);
    } catch (const UsageError& e) {
      throw ConfigError("agents", "agent " + std::to_string(i) + ": " + e.what());
    }
  }
}

std::unique_ptr<Scenario> TabularScenario::clone() const { return std::make_unique<TabularScenario>(*this); }

JointState TabularScenario::initial_state(Rng& environment) const {
  JointState s;
  s.env_state = sample_index(game_.initial_dist, environment);
  s.agents = initial_agents_;
  return s;
}

std::vector<MultilevelAgentState> TabularScenario::update_agents(const JointState& state,
                                                                 std::span<const std::size_t> actions,
                                                                 std::size_t next_state, std::uint64_t t,
                                                                 const OperatorSchedule& schedule,
                                                                 std::vector<Observation>* observations) const {
  const std::size_t j = game_.joint_index(actions);
  std::vector<double> rewards(game_.num_agents());
  for (std::size_t i = 0; i < rewards.size(); ++i) rewards[i] = game_.reward(state.env_state, j, i);
  std::vector<MultilevelAgentState> out;
  out.reserve(state.agents.size());
  if (observations) observations->clear();
  for (std::size_t i = 0; i < state.agents.size(); ++i) {
    const Observation o =
        masked_[i] ? Observation{} : observe(models_[i], i, state.env_state, actions, rewards, next_state);
    out.push_back(update_agent(state.agents[i], models_[i], game_, i, o, actions[i], t, schedule));
    if (observations) observations->push_back(o);
  }
  return out;
}

TickRecord TabularScenario::advance(JointState& state, std::uint64_t t, RngStreams& rng,
                                    const OperatorSchedule& schedule) const {
  TickRecord rec;
  rec.t = t;
  rec.state = state.env_state;
  rec.actions.resize(state.agents.size());
  for (std::size_t i = 0; i < state.agents.size(); ++i)
    rec.actions[i] = act(state.agents[i], state.env_state, rng.agents[i]);
  const auto outcome = step(game_, state.env_state, rec.actions, rng.environment);
  rec.rewards = outcome.rewards;
  rec.next_state = outcome.next_state;
  state.agents = update_agents(state, rec.actions, outcome.next_state, t, schedule, &rec.observations);
  state.env_state = outcome.next_state;
  if (episodic_reset_ && game_.is_absorbing(state.env_state))
    state.env_state = sample_index(game_.initial_dist, rng.environment);
  return rec;
}

std::optional<JointState> TabularScenario::expected_advance(const JointState& state) const {
  const std::size_t J = game_.num_joint_actions();
  if (J * game_.num_states > kMaxEnumeratedOutcomes) return std::nullopt;
  const std::size_t s = state.env_state;
  std::vector<double> mean(flatten(state).size(), 0.0);
  for (std::size_t j = 0; j < J; ++j) {
    const JointAction a = game_.joint_action(j);
    double w_action = 1.0;
    for (std::size_t i = 0; i < a.size() && w_action != 0.0; ++i) w_action *= state.agents[i].policy.table(s, a[i]);
    if (w_action == 0.0) continue;
    const auto row = game_.transition_row(s, j);
    for (std::size_t next = 0; next < game_.num_states; ++next) {
      const double w = w_action * row[next];
      if (w == 0.0) continue;
      JointState successor = state;
      successor.agents = update_agents(state, a, next, 0, OperatorSchedule{}, nullptr);
      const auto x = flatten(successor);
      for (std::size_t k = 0; k < x.size(); ++k) mean[k] += w * x[k];
    }
  }
  JointState out = unflatten(state, mean);
  out.env_state = s;
  return out;
}

std::vector<StochasticPolicy> joint_policy_of(const JointState& state) {
  std::vector<StochasticPolicy> out;
  out.reserve(state.agents.size());
  for (const auto& a : state.agents) out.push_back(a.policy.table);
  return out;
}

std::vector<double> TabularScenario::behavioral_gaps(const JointState& state) const {
  const auto policies = joint_policy_of(state);
  std::vector<double> out;
  for (std::size_t i = 0; i < game_.num_agents(); ++i) out.push_back(brgap(game_, policies, i));
  return out;
}

std::vector<PerturbationTarget> TabularScenario::perturbation_targets() const {
  return {PerturbationTarget::reward_contingency, PerturbationTarget::policy, PerturbationTarget::belief,
          PerturbationTarget::neural_params, PerturbationTarget::observation_mask};
}

std::unique_ptr<Scenario> TabularScenario::perturbed(const PerturbationSpec& p) const {
  if (p.agent >= num_agents()) throw UsageError("perturbation agent out of range");
  auto copy = std::make_unique<TabularScenario>(*this);
  if (p.target == PerturbationTarget::reward_contingency) {
    const std::size_t n = game_.num_states * game_.num_joint_actions();
    std::vector<double> rewards(n);
    for (std::size_t k = 0; k < n; ++k) rewards[k] = game_.rewards[k * num_agents() + p.agent];
    apply_delta(rewards, p);
    for (std::size_t k = 0; k < n; ++k) {
      if (!std::isfinite(rewards[k])) throw UsageError("reward perturbation produced a non-finite reward");
      copy->game_.rewards[k * num_agents() + p.agent] = rewards[k];
    }
    return copy;
  }
  if (p.target == PerturbationTarget::observation_mask) {
    if (p.magnitude != 0.0) copy->masked_[p.agent] = true;
    return copy;
  }
  return Scenario::perturbed(p);
}

void TabularScenario::perturb_state(JointState& state, const PerturbationSpec& p) const {
  Scenario::perturb_state(state, p);
}

}  // namespace mie
