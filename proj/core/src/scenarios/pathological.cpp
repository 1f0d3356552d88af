#include <algorithm>
#include <cmath>

#include "builders.hpp"
#include "mie/equilibrium.hpp"
#include "mie/errors.hpp"
#include "mie/scenarios.hpp"

namespace mie {

using pathology::kEngage;
using pathology::kWithdraw;

PathologicalConfig PathologicalConfig::defaults(PathologyVariant variant) {
  PathologicalConfig c;
  c.variant = variant;
  if (variant == PathologyVariant::anxiety) {
    c.true_probability = 0.1;
    c.belief_bias = 0.0;
    c.initial_belief = 0.9;
    c.policy_mode = PolicyMode::pure;
  }
  return c;
}

void PathologicalConfig::validate() const {
  auto unit = [](double v, const char* key) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string("scenario.") + key, "must lie in [0, 1]");
  };
  unit(true_probability, "true_probability");
  unit(initial_belief, "initial_belief");
  if (!(belief_rate > 0.0 && belief_rate <= 1.0)) throw ConfigError("scenario.belief_rate", "must lie in (0, 1]");
  if (!std::isfinite(belief_bias)) throw ConfigError("scenario.belief_bias", "must be finite");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("scenario.beta", "must be finite and >= 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("scenario.alpha", "must lie in [0, 1]");
  if (!(discount >= 0.0 && discount < 1.0)) throw ConfigError("scenario.discount", "must lie in [0, 1)");
  for (double v : {reward_gain, safe_reward, approach_gain, threat_cost, avoid_reward})
    if (!std::isfinite(v)) throw ConfigError("scenario", "rewards must be finite");
}

namespace {

TabularMarkovGame pathology_game(const PathologicalConfig& c) {
  auto g = TabularMarkovGame::zeros(2, {2}, c.discount);
  const double p = c.true_probability;
  for (std::size_t s = 0; s < 2; ++s) {
    if (c.variant == PathologyVariant::depression) {
      for (std::size_t a = 0; a < 2; ++a) {
        g.probability(s, a, 1) = p;
        g.probability(s, a, 0) = 1.0 - p;
      }
      g.reward(s, kEngage, 0) = p * c.reward_gain;
      g.reward(s, kWithdraw, 0) = c.safe_reward;
    } else {
      g.probability(s, kEngage, 1) = p;
      g.probability(s, kEngage, 0) = 1.0 - p;
      g.probability(s, kWithdraw, 0) = 1.0;
      g.reward(s, kEngage, 0) = c.approach_gain - p * c.threat_cost;
      g.reward(s, kWithdraw, 0) = c.avoid_reward;
    }
  }
  return g;
}

}  // namespace

PathologicalScenario::PathologicalScenario(PathologicalConfig config)
    : config_(config), game_((config.validate(), pathology_game(config))) {}

nlohmann::json PathologicalScenario::to_json() const {
  return {{"kind", "pathological"},
          {"variant", config_.variant == PathologyVariant::depression ? "depression" : "anxiety"},
          {"true_probability", config_.true_probability},
          {"belief_bias", config_.belief_bias},
          {"belief_rate", config_.belief_rate},
          {"initial_belief", config_.initial_belief},
          {"beta", config_.beta},
          {"alpha", config_.alpha},
          {"reward_gain", config_.reward_gain},
          {"safe_reward", config_.safe_reward},
          {"approach_gain", config_.approach_gain},
          {"threat_cost", config_.threat_cost},
          {"avoid_reward", config_.avoid_reward},
          {"policy_mode", config_.policy_mode == PolicyMode::softmax ? "softmax" : "pure"},
          {"discount", config_.discount}};
}

std::unique_ptr<Scenario> PathologicalScenario::clone() const { return std::make_unique<PathologicalScenario>(*this); }

double PathologicalScenario::belief_update(double belief, std::optional<double> outcome) const {
  if (!outcome) return belief;
  const double g = config_.belief_rate;
  if (config_.variant == PathologyVariant::depression)
    return std::clamp((1.0 - g) * belief + g * (*outcome - config_.belief_bias), 0.0, 1.0);
  return (1.0 - g) * belief + g * *outcome;
}

double PathologicalScenario::analytic_belief_fixed_point() const {
  return std::clamp(std::max(config_.true_probability - config_.belief_bias, 0.0), 0.0, 1.0);
}

std::array<double, 2> PathologicalScenario::perceived_values(double belief) const {
  if (config_.variant == PathologyVariant::depression) return {belief * config_.reward_gain, config_.safe_reward};
  return {config_.approach_gain - belief * config_.threat_cost, config_.avoid_reward};
}

JointState PathologicalScenario::initial_state(Rng& environment) const {
  JointState s;
  s.env_state = sample_index(game_.initial_dist, environment);
  MultilevelAgentState a;
  a.theta = {std::vector<double>(4, 0.0), config_.alpha};
  a.belief = BeliefState::categorical({config_.initial_belief, 1.0 - config_.initial_belief});
  a.policy.kind = PolicyKind::tabular;
  a.policy.beta = config_.beta;
  const auto values = perceived_values(config_.initial_belief);
  if (config_.policy_mode == PolicyMode::pure) {
    const std::array<std::size_t, 2> greedy{argmax(values), argmax(values)};
    a.policy.table = StochasticPolicy::deterministic(2, 2, greedy);
  } else {
    a.policy.table = StochasticPolicy::uniform(2, 2);
    const auto row = softmax(values, config_.beta);
    for (std::size_t st = 0; st < 2; ++st) std::copy(row.begin(), row.end(), a.policy.table.row(st).begin());
  }
  s.agents.push_back(std::move(a));
  return s;
}

void PathologicalScenario::apply_outcome(JointState& state, std::size_t action, std::size_t next_state,
                                         bool observed, std::uint64_t t, const OperatorSchedule& schedule) const {
  auto& agent = state.agents[0];
  const std::size_t s = state.env_state;
  if (masked_) return;
  if (schedule.belief_due(t) && observed) {
    const double b = belief_update(agent.belief.probs[0], double(next_state));
    agent.belief.probs = {b, 1.0 - b};
    agent.belief.count += 1.0;
  }
  if (schedule.neural_due(t)) {
    double& q = agent.theta.values[s * 2 + action];
    q += agent.theta.learning_rate * (game_.reward(s, action, 0) - q);
  }
  if (schedule.policy_due(t) && config_.policy_mode == PolicyMode::softmax) {
    const auto row = softmax(perceived_values(agent.belief.probs[0]), agent.policy.beta);
    for (std::size_t st = 0; st < 2; ++st) std::copy(row.begin(), row.end(), agent.policy.table.row(st).begin());
  }
}

TickRecord PathologicalScenario::advance(JointState& state, std::uint64_t t, RngStreams& rng,
                                         const OperatorSchedule& schedule) const {
  TickRecord rec;
  rec.t = t;
  rec.state = state.env_state;
  const std::size_t a = act(state.agents[0], state.env_state, rng.agents[0]);
  const std::array<std::size_t, 1> actions{a};
  const auto outcome = step(game_, state.env_state, actions, rng.environment);
  rec.actions = {a};
  rec.rewards = outcome.rewards;
  rec.next_state = outcome.next_state;
  rec.scalars = {state.agents[0].belief.probs[0], state.agents[0].policy.table(state.env_state, kEngage)};
  const bool observed = config_.variant == PathologyVariant::depression || a == kEngage;
  Observation o;
  if (!masked_) {
    o.state = state.env_state;
    o.next_state = outcome.next_state;
    o.reward = outcome.rewards[0];
    if (observed) o.signal = double(outcome.next_state);
  }
  rec.observations = {o};
  apply_outcome(state, a, outcome.next_state, observed, t, schedule);
  state.env_state = outcome.next_state;
  return rec;
}

std::optional<JointState> PathologicalScenario::expected_advance(const JointState& state) const {
  const std::size_t s = state.env_state;
  std::vector<double> mean(flatten(state).size(), 0.0);
  for (std::size_t a = 0; a < 2; ++a) {
    const double pa = state.agents[0].policy.table(s, a);
    if (pa == 0.0) continue;
    for (std::size_t next = 0; next < 2; ++next) {
      const double w = pa * game_.probability(s, a, next);
      if (w == 0.0) continue;
      JointState copy = state;
      apply_outcome(copy, a, next, config_.variant == PathologyVariant::depression || a == kEngage, 0,
                    OperatorSchedule{});
      const auto x = flatten(copy);
      for (std::size_t k = 0; k < x.size(); ++k) mean[k] += w * x[k];
    }
  }
  JointState out = unflatten(state, mean);
  out.env_state = s;
  return out;
}

std::vector<double> PathologicalScenario::behavioral_gaps(const JointState& state) const {
  return {brgap(game_, joint_policy_of(state), 0)};
}

std::vector<PerturbationTarget> PathologicalScenario::perturbation_targets() const {
  return {PerturbationTarget::reward_contingency, PerturbationTarget::policy, PerturbationTarget::belief,
          PerturbationTarget::neural_params, PerturbationTarget::observation_mask};
}

std::unique_ptr<Scenario> PathologicalScenario::perturbed(const PerturbationSpec& p) const {
  if (p.agent != 0) throw UsageError("perturbation agent out of range");
  auto copy = std::make_unique<PathologicalScenario>(*this);
  if (p.target == PerturbationTarget::reward_contingency) {
    apply_delta(copy->game_.rewards, p);
    return copy;
  }
  if (p.target == PerturbationTarget::observation_mask) {
    if (p.magnitude != 0.0) copy->masked_ = true;
    return copy;
  }
  return Scenario::perturbed(p);
}

void PathologicalScenario::perturb_state(JointState& state, const PerturbationSpec& p) const {
  Scenario::perturb_state(state, p);
}

namespace detail {

std::unique_ptr<Scenario> make_pathological(const nlohmann::json& j) {
  reject_unknown_keys(j, {"kind", "variant", "true_probability", "belief_bias", "belief_rate", "initial_belief", "beta",
                          "alpha", "reward_gain", "safe_reward", "approach_gain", "threat_cost", "avoid_reward",
                          "policy_mode", "discount"});
  const auto variant = field<std::string>(j, "variant", "depression");
  PathologicalConfig c;
  if (variant == "depression")
    c = PathologicalConfig::defaults(PathologyVariant::depression);
  else if (variant == "anxiety")
    c = PathologicalConfig::defaults(PathologyVariant::anxiety);
  else
    throw ConfigError("scenario.variant", "expected 'depression' or 'anxiety'");
  c.true_probability = field(j, "true_probability", c.true_probability);
  c.belief_bias = field(j, "belief_bias", c.belief_bias);
  c.belief_rate = field(j, "belief_rate", c.belief_rate);
  c.initial_belief = field(j, "initial_belief", c.initial_belief);
  c.beta = field(j, "beta", c.beta);
  c.alpha = field(j, "alpha", c.alpha);
  c.reward_gain = field(j, "reward_gain", c.reward_gain);
  c.safe_reward = field(j, "safe_reward", c.safe_reward);
  c.approach_gain = field(j, "approach_gain", c.approach_gain);
  c.threat_cost = field(j, "threat_cost", c.threat_cost);
  c.avoid_reward = field(j, "avoid_reward", c.avoid_reward);
  const auto mode = field<std::string>(j, "policy_mode", c.policy_mode == PolicyMode::softmax ? "softmax" : "pure");
  if (mode == "softmax")
    c.policy_mode = PolicyMode::softmax;
  else if (mode == "pure")
    c.policy_mode = PolicyMode::pure;
  else
    throw ConfigError("scenario.policy_mode", "expected 'softmax' or 'pure'");
  c.discount = field(j, "discount", c.discount);
  return std::make_unique<PathologicalScenario>(c);
}

}  // namespace detail

}  // namespace mie
