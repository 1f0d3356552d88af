#include <algorithm>

#include "builders.hpp"
#include "mie/errors.hpp"
#include "mie/scenarios.hpp"

namespace mie {

TabularMarkovGame matrix_game(std::string_view name, double discount) {
  auto g = TabularMarkovGame::zeros(1, {2, 2}, discount);
  const std::array<std::array<std::array<double, 2>, 2>, 2>* payoff = nullptr;
  // payoff[a0][a1] = {r0, r1}
  static constexpr std::array<std::array<std::array<double, 2>, 2>, 2> pennies{{{{{1, -1}, {-1, 1}}}, {{{-1, 1}, {1, -1}}}}};
  static constexpr std::array<std::array<std::array<double, 2>, 2>, 2> dilemma{{{{{3, 3}, {0, 5}}}, {{{5, 0}, {1, 1}}}}};
  static constexpr std::array<std::array<std::array<double, 2>, 2>, 2> coordination{{{{{2, 2}, {0, 0}}}, {{{0, 0}, {2, 2}}}}};
  if (name == "matching_pennies")
    payoff = &pennies;
  else if (name == "prisoners_dilemma")
    payoff = &dilemma;
  else if (name == "coordination")
    payoff = &coordination;
  else
    throw ConfigError("scenario.game", "unknown matrix game '" + std::string(name) + "'");
  for (std::size_t a0 = 0; a0 < 2; ++a0) {
    for (std::size_t a1 = 0; a1 < 2; ++a1) {
      const std::size_t j = g.joint_index(std::array<std::size_t, 2>{a0, a1});
      g.probability(0, j, 0) = 1.0;
      g.reward(0, j, 0) = (*payoff)[a0][a1][0];
      g.reward(0, j, 1) = (*payoff)[a0][a1][1];
    }
  }
  return g;
}

namespace {

std::string_view learner_name(LearnerKind k) {
  switch (k) {
    case LearnerKind::q_learner:
      return "q_learner";
    case LearnerKind::fictitious_play:
      return "fictitious_play";
    case LearnerKind::fixed:
      return "fixed";
  }
  return "q_learner";
}

nlohmann::json learner_to_json(const LearnerConfig& c) {
  return {{"learner", std::string(learner_name(c.kind))},
          {"alpha", c.alpha},
          {"beta", c.beta},
          {"belief_rate", c.belief_rate},
          {"depth", c.depth},
          {"td_discount", c.td_discount},
          {"initial_q", c.initial_q},
          {"policy", c.policy},
          {"belief_weight", c.belief_weight}};
}

LearnerConfig learner_from_json(const nlohmann::json& j, const std::string& prefix) {
  if (!j.is_object()) throw ConfigError(prefix, "must be an object");
  detail::reject_unknown_keys(
      j, {"learner", "alpha", "beta", "belief_rate", "depth", "td_discount", "initial_q", "policy", "belief_weight"},
      prefix);
  LearnerConfig c;
  const auto kind = detail::field<std::string>(j, "learner", "q_learner", prefix);
  if (kind == "q_learner")
    c.kind = LearnerKind::q_learner;
  else if (kind == "fictitious_play")
    c.kind = LearnerKind::fictitious_play;
  else if (kind == "fixed")
    c.kind = LearnerKind::fixed;
  else
    throw ConfigError(prefix + "learner", "unknown learner '" + kind + "'");
  c.alpha = detail::field(j, "alpha", c.alpha, prefix);
  c.beta = detail::field(j, "beta", c.beta, prefix);
  c.belief_rate = detail::field(j, "belief_rate", c.belief_rate, prefix);
  c.depth = detail::field(j, "depth", c.depth, prefix);
  c.td_discount = detail::field(j, "td_discount", c.td_discount, prefix);
  c.initial_q = detail::field(j, "initial_q", c.initial_q, prefix);
  c.policy = detail::field(j, "policy", c.policy, prefix);
  c.belief_weight = detail::field(j, "belief_weight", c.belief_weight, prefix);
  if (!(c.alpha >= 0.0)) throw ConfigError(prefix + "alpha", "must be nonnegative");
  if (!(c.beta >= 0.0)) throw ConfigError(prefix + "beta", "must be nonnegative");
  if (!(c.belief_rate >= 0.0 && c.belief_rate <= 1.0)) throw ConfigError(prefix + "belief_rate", "must lie in [0, 1]");
  if (c.depth < 0 || c.depth > kMaxBeliefDepth) throw ConfigError(prefix + "depth", "must be 0, 1 or 2");
  if (!(c.td_discount >= 0.0 && c.td_discount < 1.0)) throw ConfigError(prefix + "td_discount", "must lie in [0, 1)");
  return c;
}

BeliefState opponent_belief(const TabularMarkovGame& game, std::size_t agent, int depth) {
  if (game.num_agents() != 2) return BeliefState::uniform(1, 0);
  BeliefState b = BeliefState::uniform(game.actions_per_agent[1 - agent], depth);
  if (depth >= 2) b.nested.push_back(BeliefState::uniform(game.actions_per_agent[agent], 1));
  return b;
}

}  // namespace

namespace detail {

// Agent model and initial state of a learner inside an arbitrary tabular game.
std::pair<AgentModel, MultilevelAgentState> make_learner(const LearnerConfig& c, const TabularMarkovGame& game,
                                                         std::size_t agent, const std::string& prefix) {
  const std::size_t S = game.num_states;
  const std::size_t A = game.actions_per_agent[agent];
  AgentModel model;
  model.belief_rate = c.belief_rate;
  model.td_discount = c.td_discount;
  if (game.num_agents() != 2) model.belief_rule = BeliefRule::none;

  MultilevelAgentState state;
  state.theta.learning_rate = c.alpha;
  state.belief = opponent_belief(game, agent, c.depth);
  state.policy.beta = c.beta;
  state.policy.table = StochasticPolicy::uniform(S, A);

  switch (c.kind) {
    case LearnerKind::q_learner:
      model.neural_rule = NeuralRule::q_learning;
      model.policy_rule = PolicyRule::softmax_q;
      state.policy.kind = PolicyKind::softmax_of_q;
      if (game.num_agents() == 2) state.policy.belief_weight = c.belief_weight;
      state.theta.values.assign(S * A, 0.0);
      if (!c.initial_q.empty()) {
        if (c.initial_q.size() == A) {
          for (std::size_t s = 0; s < S; ++s) std::copy(c.initial_q.begin(), c.initial_q.end(), state.theta.values.begin() + std::ptrdiff_t(s * A));
        } else if (c.initial_q.size() == S * A) {
          state.theta.values = c.initial_q;
        } else {
          throw ConfigError(prefix + "initial_q", "needs |A| or |S| * |A| entries");
        }
      }
      break;
    case LearnerKind::fictitious_play:
      if (game.num_agents() != 2) throw ConfigError(prefix + "learner", "fictitious play needs a 2-agent game");
      model.neural_rule = NeuralRule::none;
      model.policy_rule = PolicyRule::smooth_best_response;
      break;
    case LearnerKind::fixed:
      model.belief_rule = BeliefRule::none;
      model.neural_rule = NeuralRule::none;
      model.policy_rule = PolicyRule::fixed;
      break;
  }

  if (!c.policy.empty()) {
    if (c.policy.size() == A) {
      for (std::size_t s = 0; s < S; ++s) std::copy(c.policy.begin(), c.policy.end(), state.policy.table.row(s).begin());
    } else if (c.policy.size() == S * A) {
      state.policy.table.probs = c.policy;
    } else {
      throw ConfigError(prefix + "policy", "needs |A| or |S| * |A| entries");
    }
    try {
      validate_policy(state.policy);
    } catch (const UsageError& e) {
      throw ConfigError(prefix + "policy", e.what());
    }
  } else {
    state.policy = policy_refresh_H(state.policy, state.theta, state.belief, model, game, agent);
  }
  return {model, state};
}

LearnerConfig learner_config_from_json(const nlohmann::json& j, const std::string& prefix) {
  return learner_from_json(j, prefix);
}

nlohmann::json learner_config_to_json(const LearnerConfig& c) { return learner_to_json(c); }

std::unique_ptr<Scenario> make_matrix_game(const nlohmann::json& j) {
  reject_unknown_keys(j, {"kind", "game", "discount", "agents"});
  MatrixGameConfig c;
  c.name = field<std::string>(j, "game", c.name);
  c.discount = field(j, "discount", c.discount);
  if (j.contains("agents")) {
    const auto& agents = j.at("agents");
    if (!agents.is_array() || agents.size() != 2) throw ConfigError("scenario.agents", "expected two learners");
    for (std::size_t i = 0; i < 2; ++i)
      c.agents[i] = learner_from_json(agents[i], "scenario.agents[" + std::to_string(i) + "].");
  }
  return build_matrix_game(c);
}

}  // namespace detail

std::unique_ptr<TabularScenario> build_matrix_game(const MatrixGameConfig& config) {
  if (!(config.discount >= 0.0 && config.discount < 1.0))
    throw ConfigError("scenario.discount", "must lie in [0, 1)");
  TabularMarkovGame game = matrix_game(config.name, config.discount);
  std::vector<AgentModel> models;
  std::vector<MultilevelAgentState> agents;
  for (std::size_t i = 0; i < 2; ++i) {
    auto [model, state] =
        detail::make_learner(config.agents[i], game, i, "scenario.agents[" + std::to_string(i) + "].");
    models.push_back(std::move(model));
    agents.push_back(std::move(state));
  }
  nlohmann::json json{{"kind", "matrix_game"},
                      {"game", config.name},
                      {"discount", config.discount},
                      {"agents", {learner_to_json(config.agents[0]), learner_to_json(config.agents[1])}}};
  return std::make_unique<TabularScenario>("matrix_game", std::move(json), std::move(game), std::move(models),
                                           std::move(agents));
}

std::unique_ptr<TabularScenario> build_matrix_game(std::string_view name, double beta, double alpha,
                                                   LearnerKind kind) {
  MatrixGameConfig c;
  c.name = std::string(name);
  for (auto& a : c.agents) {
    a.kind = kind;
    a.beta = beta;
    a.alpha = alpha;
  }
  return build_matrix_game(c);
}

}  // namespace mie
