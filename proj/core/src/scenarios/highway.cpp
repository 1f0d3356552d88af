#include <algorithm>

#include "builders.hpp"
#include "mie/errors.hpp"
#include "mie/scenarios.hpp"

namespace mie {

void HighwayMergeConfig::validate() const {
  if (ramp_length < 1) throw ConfigError("scenario.ramp_length", "must be at least 1");
  if (gap_levels < 2) throw ConfigError("scenario.gap_levels", "must be at least 2");
  if (safe_gap >= gap_levels) throw ConfigError("scenario.safe_gap", "must be below gap_levels");
  if (initial_gap >= gap_levels) throw ConfigError("scenario.initial_gap", "must be below gap_levels");
  if (!(gap_noise >= 0.0 && gap_noise <= 1.0)) throw ConfigError("scenario.gap_noise", "must lie in [0, 1]");
  if (!(discount >= 0.0 && discount < 1.0)) throw ConfigError("scenario.discount", "must lie in [0, 1)");
  if (!(alpha >= 0.0)) throw ConfigError("scenario.alpha", "must be nonnegative");
  if (!(beta >= 0.0)) throw ConfigError("scenario.beta", "must be nonnegative");
}

TabularMarkovGame highway_merge_game(const HighwayMergeConfig& c) {
  c.validate();
  using namespace highway;
  const HighwayLayout layout{c.ramp_length, c.gap_levels};
  auto g = TabularMarkovGame::zeros(layout.num_states(), {3, 3}, c.discount);
  const auto max_gap = static_cast<long>(c.gap_levels - 1);

  for (std::size_t pos = 0; pos < c.ramp_length; ++pos) {
    for (std::size_t gap = 0; gap < c.gap_levels; ++gap) {
      const std::size_t s = layout.state(pos, gap);
      for (std::size_t h = 0; h < 3; ++h) {
        for (std::size_t v = 0; v < 3; ++v) {
          const std::size_t j = g.joint_index(std::array<std::size_t, 2>{h, v});
          const long change = v == kAccelerate ? -1 : v == kYield ? 1 : 0;
          const long intended = std::clamp(static_cast<long>(gap) + change, 0L, max_gap);
          // Realized gap: the intended one, or one level off either way under noise.
          std::vector<std::pair<long, double>> gaps{{intended, 1.0 - c.gap_noise}};
          if (c.gap_noise > 0.0) {
            gaps.emplace_back(std::clamp(intended - 1, 0L, max_gap), 0.5 * c.gap_noise);
            gaps.emplace_back(std::clamp(intended + 1, 0L, max_gap), 0.5 * c.gap_noise);
          }
          double p_merged = 0.0;
          double p_collided = 0.0;
          for (const auto& [new_gap, p] : gaps) {
            if (p == 0.0) continue;
            const bool attempts = h == kAccelerate || (h == kHold && pos == 0);
            std::size_t next;
            if (attempts) {
              next = std::size_t(new_gap) >= c.safe_gap ? layout.merged() : layout.collided();
            } else {
              const std::size_t next_pos = h == kHold ? pos - 1 : pos;
              next = layout.state(next_pos, std::size_t(new_gap));
            }
            g.probability(s, j, next) += p;
            if (next == layout.merged()) p_merged += p;
            if (next == layout.collided()) p_collided += p;
          }
          const double r = c.time_cost + c.merge_reward * p_merged + c.collision_penalty * p_collided;
          g.reward(s, j, kHuman) = r;
          g.reward(s, j, kVehicle) = r;
        }
      }
    }
  }
  for (std::size_t s : {layout.merged(), layout.collided()})
    for (std::size_t j = 0; j < g.num_joint_actions(); ++j) g.probability(s, j, s) = 1.0;

  std::fill(g.initial_dist.begin(), g.initial_dist.end(), 0.0);
  g.initial_dist[layout.state(c.ramp_length - 1, c.initial_gap)] = 1.0;
  return g;
}

namespace {

// Three stereotyped opponent types: mostly accelerate, mostly hold, mostly yield.
std::vector<StochasticPolicy> driver_types(std::size_t num_states) {
  std::vector<StochasticPolicy> types;
  for (std::size_t main = 0; main < 3; ++main) {
    StochasticPolicy p = StochasticPolicy::uniform(num_states, 3);
    for (std::size_t s = 0; s < num_states; ++s)
      for (std::size_t a = 0; a < 3; ++a) p(s, a) = a == main ? 0.8 : 0.1;
    types.push_back(std::move(p));
  }
  return types;
}

nlohmann::json highway_to_json(const HighwayMergeConfig& c) {
  return {{"kind", "highway_merge"},         {"ramp_length", c.ramp_length},
          {"gap_levels", c.gap_levels},      {"safe_gap", c.safe_gap},
          {"initial_gap", c.initial_gap},    {"gap_noise", c.gap_noise},
          {"merge_reward", c.merge_reward},  {"collision_penalty", c.collision_penalty},
          {"time_cost", c.time_cost},        {"discount", c.discount},
          {"alpha", c.alpha},                {"beta", c.beta},
          {"episodic_reset", c.episodic_reset}};
}

}  // namespace

std::unique_ptr<TabularScenario> build_highway_merge(const HighwayMergeConfig& config) {
  TabularMarkovGame game = highway_merge_game(config);
  const std::size_t S = game.num_states;
  std::vector<AgentModel> models;
  std::vector<MultilevelAgentState> agents;
  for (std::size_t i = 0; i < 2; ++i) {
    AgentModel m;
    m.belief_rule = BeliefRule::bayes_types;
    m.neural_rule = NeuralRule::q_learning;
    m.policy_rule = PolicyRule::softmax_q;
    m.td_discount = config.discount;
    m.opponent_types = driver_types(S);
    MultilevelAgentState a;
    a.theta = {std::vector<double>(S * 3, 0.0), config.alpha};
    a.belief = BeliefState::uniform(3, 1);
    a.policy.kind = PolicyKind::softmax_of_q;
    a.policy.beta = config.beta;
    a.policy.belief_weight = 1.0;
    a.policy.table = StochasticPolicy::uniform(S, 3);
    a.policy = policy_refresh_H(a.policy, a.theta, a.belief, m, game, i);
    models.push_back(std::move(m));
    agents.push_back(std::move(a));
  }
  return std::make_unique<TabularScenario>("highway_merge", highway_to_json(config), std::move(game),
                                           std::move(models), std::move(agents), config.episodic_reset);
}

namespace detail {

std::unique_ptr<Scenario> make_highway(const nlohmann::json& j) {
  reject_unknown_keys(j, {"kind", "ramp_length", "gap_levels", "safe_gap", "initial_gap", "gap_noise", "merge_reward",
                          "collision_penalty", "time_cost", "discount", "alpha", "beta", "episodic_reset"});
  HighwayMergeConfig c;
  c.ramp_length = field(j, "ramp_length", c.ramp_length);
  c.gap_levels = field(j, "gap_levels", c.gap_levels);
  c.safe_gap = field(j, "safe_gap", c.safe_gap);
  c.initial_gap = field(j, "initial_gap", c.initial_gap);
  c.gap_noise = field(j, "gap_noise", c.gap_noise);
  c.merge_reward = field(j, "merge_reward", c.merge_reward);
  c.collision_penalty = field(j, "collision_penalty", c.collision_penalty);
  c.time_cost = field(j, "time_cost", c.time_cost);
  c.discount = field(j, "discount", c.discount);
  c.alpha = field(j, "alpha", c.alpha);
  c.beta = field(j, "beta", c.beta);
  c.episodic_reset = field(j, "episodic_reset", c.episodic_reset);
  return build_highway_merge(c);
}

}  // namespace detail

}  // namespace mie
