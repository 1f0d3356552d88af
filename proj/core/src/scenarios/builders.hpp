#pragma once

#include <initializer_list>
#include <memory>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "mie/errors.hpp"
#include "mie/scenarios.hpp"
#include "mie/system.hpp"

namespace mie::detail {

/// Optional key with a typed default; wrong types raise ConfigError naming the key.
template <typename T>
T field(const nlohmann::json& j, const char* key, T fallback, const std::string& prefix = "scenario.") {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(prefix + key, "has the wrong type");
  }
}

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> known,
                                const std::string& prefix = "scenario.") {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(prefix + key, "unknown key");
  }
}

std::pair<AgentModel, MultilevelAgentState> make_learner(const LearnerConfig& c, const TabularMarkovGame& game,
                                                         std::size_t agent, const std::string& prefix);
LearnerConfig learner_config_from_json(const nlohmann::json& j, const std::string& prefix);
nlohmann::json learner_config_to_json(const LearnerConfig& c);

std::unique_ptr<Scenario> make_toy(const nlohmann::json& j);
std::unique_ptr<Scenario> make_matrix_game(const nlohmann::json& j);
std::unique_ptr<Scenario> make_highway(const nlohmann::json& j);
std::unique_ptr<Scenario> make_bmi(const nlohmann::json& j);
std::unique_ptr<Scenario> make_pathological(const nlohmann::json& j);
std::unique_ptr<Scenario> make_tabular(const nlohmann::json& j);

}  // namespace mie::detail
