#include "builders.hpp"
#include "mie/errors.hpp"
#include "mie/scenarios.hpp"

namespace mie {

namespace detail {

// A user-supplied game with learners: {"kind": "tabular", "game": {...},
// "agents": [...], "episodic_reset": false}.
std::unique_ptr<Scenario> make_tabular(const nlohmann::json& j) {
  reject_unknown_keys(j, {"kind", "game", "agents", "episodic_reset"});
  if (!j.contains("game")) throw ConfigError("scenario.game", "missing required key");
  TabularMarkovGame game;
  try {
    game = game_from_json(j.at("game"));
  } catch (const ConfigError& e) {
    throw ConfigError("scenario.game." + e.key(), e.what());
  }
  const auto episodic = field(j, "episodic_reset", false);
  std::vector<LearnerConfig> learners(game.num_agents());
  if (j.contains("agents")) {
    const auto& agents = j.at("agents");
    if (!agents.is_array() || agents.size() != game.num_agents())
      throw ConfigError("scenario.agents", "expected one learner per agent");
    for (std::size_t i = 0; i < learners.size(); ++i)
      learners[i] = learner_config_from_json(agents[i], "scenario.agents[" + std::to_string(i) + "].");
  }
  std::vector<AgentModel> models;
  std::vector<MultilevelAgentState> states;
  nlohmann::json agents_json = nlohmann::json::array();
  for (std::size_t i = 0; i < learners.size(); ++i) {
    auto [model, state] = make_learner(learners[i], game, i, "scenario.agents[" + std::to_string(i) + "].");
    models.push_back(std::move(model));
    states.push_back(std::move(state));
    agents_json.push_back(learner_config_to_json(learners[i]));
  }
  nlohmann::json config{
      {"kind", "tabular"}, {"game", game_to_json(game)}, {"agents", agents_json}, {"episodic_reset", episodic}};
  return std::make_unique<TabularScenario>("tabular", std::move(config), std::move(game), std::move(models),
                                           std::move(states), episodic);
}

}  // namespace detail

std::unique_ptr<Scenario> make_scenario(const nlohmann::json& config) {
  if (!config.is_object()) throw ConfigError("scenario", "must be an object");
  if (!config.contains("kind")) throw ConfigError("scenario.kind", "missing required key");
  const auto kind = detail::field<std::string>(config, "kind", "");
  if (kind == "toy_coadapt") return detail::make_toy(config);
  if (kind == "matrix_game") return detail::make_matrix_game(config);
  if (kind == "highway_merge") return detail::make_highway(config);
  if (kind == "bmi_coadapt") return detail::make_bmi(config);
  if (kind == "pathological") return detail::make_pathological(config);
  if (kind == "tabular") return detail::make_tabular(config);
  throw ConfigError("scenario.kind", "unknown scenario kind '" + kind + "'");
}

std::vector<std::string> scenario_kinds() {
  return {"toy_coadapt", "matrix_game", "highway_merge", "bmi_coadapt", "pathological", "tabular"};
}

}  // namespace mie
