#include "mie/game.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mie/errors.hpp"

namespace mie {

namespace {

constexpr double kRowSumTolerance = 1e-12;

std::string joint_to_string(const JointAction& a) {
  std::string out = "(";
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(a[i]);
  }
  return out + ")";
}

}  // namespace

StochasticPolicy StochasticPolicy::uniform(std::size_t num_states, std::size_t num_actions) {
  if (num_actions == 0) throw UsageError("policy needs at least one action");
  return {num_states, num_actions, std::vector<double>(num_states * num_actions, 1.0 / double(num_actions))};
}

StochasticPolicy StochasticPolicy::deterministic(std::size_t num_states, std::size_t num_actions,
                                                 std::span<const std::size_t> choice) {
  if (choice.size() != num_states) throw UsageError("deterministic policy: one action per state required");
  StochasticPolicy p{num_states, num_actions, std::vector<double>(num_states * num_actions, 0.0)};
  for (std::size_t s = 0; s < num_states; ++s) {
    if (choice[s] >= num_actions) throw UsageError("deterministic policy: action out of range");
    p(s, choice[s]) = 1.0;
  }
  return p;
}

void require_distribution_rows(const StochasticPolicy& policy, double tolerance, const std::string& what) {
  if (policy.probs.size() != policy.num_states * policy.num_actions)
    throw UsageError(what + ": table size does not match its shape");
  for (std::size_t s = 0; s < policy.num_states; ++s) {
    double sum = 0.0;
    for (double p : policy.row(s)) {
      if (!(p >= 0.0)) throw UsageError(what + ": negative probability in state " + std::to_string(s));
      sum += p;
    }
    if (std::abs(sum - 1.0) > tolerance)
      throw UsageError(what + ": row " + std::to_string(s) + " sums to " + std::to_string(sum));
  }
}

TabularMarkovGame TabularMarkovGame::zeros(std::size_t num_states, std::vector<std::size_t> actions_per_agent,
                                           double discount) {
  TabularMarkovGame g;
  g.num_states = num_states;
  g.actions_per_agent = std::move(actions_per_agent);
  g.discount = discount;
  const std::size_t joint = g.num_joint_actions();
  if (num_states * joint > kMaxTensorEntries)
    throw UsageError("game exceeds the dense size guard of " + std::to_string(kMaxTensorEntries) + " entries");
  g.transition.assign(num_states * joint * num_states, 0.0);
  g.rewards.assign(num_states * joint * g.num_agents(), 0.0);
  g.initial_dist.assign(num_states, 0.0);
  if (num_states > 0) g.initial_dist[0] = 1.0;
  return g;
}

std::size_t TabularMarkovGame::num_joint_actions() const {
  std::size_t n = 1;
  for (std::size_t a : actions_per_agent) n *= a;
  return actions_per_agent.empty() ? 0 : n;
}

std::size_t TabularMarkovGame::joint_index(std::span<const std::size_t> actions) const {
  if (actions.size() != num_agents()) throw UsageError("joint action has wrong number of agents");
  std::size_t idx = 0;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (actions[i] >= actions_per_agent[i])
      throw UsageError("action " + std::to_string(actions[i]) + " out of range for agent " + std::to_string(i));
    idx = idx * actions_per_agent[i] + actions[i];
  }
  return idx;
}

JointAction TabularMarkovGame::joint_action(std::size_t index) const {
  JointAction a(num_agents());
  for (std::size_t i = num_agents(); i-- > 0;) {
    a[i] = index % actions_per_agent[i];
    index /= actions_per_agent[i];
  }
  return a;
}

bool TabularMarkovGame::is_absorbing(std::size_t s) const {
  for (std::size_t j = 0; j < num_joint_actions(); ++j)
    if (probability(s, j, s) != 1.0) return false;
  return true;
}

std::string ValidationResult::summary() const {
  std::ostringstream out;
  for (std::size_t k = 0; k < violations.size(); ++k) {
    if (k) out << "; ";
    out << violations[k].code << ": " << violations[k].message;
  }
  return out.str();
}

ValidationResult validate_game(const TabularMarkovGame& game) {
  ValidationResult result;
  auto add = [&](std::string code, std::size_t s, JointAction a, std::string message) {
    result.violations.push_back({std::move(code), s, std::move(a), std::move(message)});
  };

  if (game.num_states == 0) add("shape", 0, {}, "game has no states");
  if (game.actions_per_agent.empty()) add("shape", 0, {}, "game has no agents");
  for (std::size_t i = 0; i < game.actions_per_agent.size(); ++i)
    if (game.actions_per_agent[i] == 0) add("shape", 0, {}, "agent " + std::to_string(i) + " has no actions");
  if (!result.ok()) return result;

  const std::size_t joint = game.num_joint_actions();
  if (game.num_states * joint > kMaxTensorEntries) {
    add("size_guard", 0, {}, "|S| * prod |A_i| = " + std::to_string(game.num_states * joint) + " exceeds " +
                                 std::to_string(kMaxTensorEntries));
    return result;
  }
  if (game.transition.size() != game.num_states * joint * game.num_states)
    add("shape", 0, {}, "transition tensor has " + std::to_string(game.transition.size()) + " entries");
  if (game.rewards.size() != game.num_states * joint * game.num_agents())
    add("shape", 0, {}, "reward tensor has " + std::to_string(game.rewards.size()) + " entries");
  if (game.initial_dist.size() != game.num_states)
    add("shape", 0, {}, "initial_dist has " + std::to_string(game.initial_dist.size()) + " entries");
  if (!(game.discount >= 0.0 && game.discount < 1.0))
    add("discount", 0, {}, "discount " + std::to_string(game.discount) + " outside [0, 1)");
  if (!result.ok()) return result;

  for (std::size_t s = 0; s < game.num_states; ++s) {
    for (std::size_t j = 0; j < joint; ++j) {
      double sum = 0.0;
      for (std::size_t next = 0; next < game.num_states; ++next) {
        const double p = game.probability(s, j, next);
        if (!(p >= 0.0) || !std::isfinite(p)) {
          add("negative_probability", s, game.joint_action(j),
              "P(" + std::to_string(next) + " | " + std::to_string(s) + ", " + joint_to_string(game.joint_action(j)) +
                  ") = " + std::to_string(p));
        }
        sum += p;
      }
      if (!(std::abs(sum - 1.0) <= kRowSumTolerance)) {
        std::ostringstream msg;
        msg.precision(17);
        msg << "row (s=" << s << ", a=" << joint_to_string(game.joint_action(j)) << ") sums to " << sum;
        add("row_sum", s, game.joint_action(j), msg.str());
      }
      for (std::size_t i = 0; i < game.num_agents(); ++i) {
        if (!std::isfinite(game.reward(s, j, i)))
          add("non_finite_reward", s, game.joint_action(j),
              "reward of agent " + std::to_string(i) + " at (s=" + std::to_string(s) + ", a=" +
                  joint_to_string(game.joint_action(j)) + ") is not finite");
      }
    }
  }
  double init_sum = 0.0;
  for (double p : game.initial_dist) {
    if (!(p >= 0.0)) add("initial_dist", 0, {}, "initial_dist has a negative entry");
    init_sum += p;
  }
  if (!(std::abs(init_sum - 1.0) <= kRowSumTolerance))
    add("initial_dist", 0, {}, "initial_dist sums to " + std::to_string(init_sum));
  return result;
}

StepResult step(const TabularMarkovGame& game, std::size_t s, std::span<const std::size_t> actions, Rng& rng) {
  if (s >= game.num_states) throw UsageError("state " + std::to_string(s) + " out of range");
  const std::size_t j = game.joint_index(actions);
  StepResult out;
  out.next_state = sample_index(game.transition_row(s, j), rng);
  out.rewards.resize(game.num_agents());
  for (std::size_t i = 0; i < game.num_agents(); ++i) out.rewards[i] = game.reward(s, j, i);
  return out;
}

Mdp single_agent_mdp(const TabularMarkovGame& game, std::size_t agent,
                     std::span<const StochasticPolicy> joint_policy) {
  if (agent >= game.num_agents()) throw UsageError("agent index out of range");
  if (joint_policy.size() != game.num_agents()) throw UsageError("joint policy needs one entry per agent");
  for (std::size_t i = 0; i < game.num_agents(); ++i) {
    if (i == agent) continue;
    const auto& p = joint_policy[i];
    if (p.num_states != game.num_states || p.num_actions != game.actions_per_agent[i])
      throw UsageError("policy of agent " + std::to_string(i) + " has the wrong shape");
    require_distribution_rows(p, 1e-9, "policy of agent " + std::to_string(i));
  }

  const std::size_t S = game.num_states;
  const std::size_t A = game.actions_per_agent[agent];
  Mdp mdp;
  mdp.num_states = S;
  mdp.num_actions = A;
  mdp.discount = game.discount;
  mdp.initial_dist = game.initial_dist;
  mdp.transition.assign(S * A * S, 0.0);
  mdp.reward.assign(S * A, 0.0);

  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t j = 0; j < game.num_joint_actions(); ++j) {
      const JointAction a = game.joint_action(j);
      double weight = 1.0;
      for (std::size_t i = 0; i < game.num_agents() && weight != 0.0; ++i)
        if (i != agent) weight *= joint_policy[i](s, a[i]);
      if (weight == 0.0) continue;
      const std::size_t own = a[agent];
      mdp.reward[s * A + own] += weight * game.reward(s, j, agent);
      const auto row = game.transition_row(s, j);
      double* out = mdp.transition.data() + (s * A + own) * S;
      for (std::size_t next = 0; next < S; ++next) out[next] += weight * row[next];
    }
  }
  return mdp;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace {

// Writes the slice of `flat` for state s as nested arrays over agents, with
// innermost arrays of length `inner`.
nlohmann::json nest(const TabularMarkovGame& g, const std::vector<double>& flat, std::size_t s, std::size_t inner,
                    std::size_t agent, std::size_t prefix) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t a = 0; a < g.actions_per_agent[agent]; ++a) {
    const std::size_t idx = prefix * g.actions_per_agent[agent] + a;
    if (agent + 1 == g.num_agents()) {
      const std::size_t base = (s * g.num_joint_actions() + idx) * inner;
      arr.push_back(std::vector<double>(flat.begin() + std::ptrdiff_t(base), flat.begin() + std::ptrdiff_t(base + inner)));
    } else {
      arr.push_back(nest(g, flat, s, inner, agent + 1, idx));
    }
  }
  return arr;
}

void unnest(const TabularMarkovGame& g, const nlohmann::json& j, std::vector<double>& flat, std::size_t s,
            std::size_t inner, std::size_t agent, std::size_t prefix, const std::string& key) {
  if (!j.is_array() || j.size() != g.actions_per_agent[agent])
    throw ConfigError(key, "expected " + std::to_string(g.actions_per_agent[agent]) + " entries for agent " +
                               std::to_string(agent) + " at state " + std::to_string(s));
  for (std::size_t a = 0; a < j.size(); ++a) {
    const std::size_t idx = prefix * g.actions_per_agent[agent] + a;
    if (agent + 1 == g.num_agents()) {
      const auto& leaf = j[a];
      if (!leaf.is_array() || leaf.size() != inner)
        throw ConfigError(key, "innermost arrays must have " + std::to_string(inner) + " numbers");
      const std::size_t base = (s * g.num_joint_actions() + idx) * inner;
      for (std::size_t k = 0; k < inner; ++k) {
        if (!leaf[k].is_number()) throw ConfigError(key, "non-numeric entry");
        flat[base + k] = leaf[k].get<double>();
      }
    } else {
      unnest(g, j[a], flat, s, inner, agent + 1, idx, key);
    }
  }
}

template <typename T>
T require(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(key, "missing required key");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(key, e.what());
  }
}

}  // namespace

nlohmann::json game_to_json(const TabularMarkovGame& game) {
  nlohmann::json transition = nlohmann::json::array();
  nlohmann::json rewards = nlohmann::json::array();
  for (std::size_t s = 0; s < game.num_states; ++s) {
    transition.push_back(nest(game, game.transition, s, game.num_states, 0, 0));
    rewards.push_back(nest(game, game.rewards, s, game.num_agents(), 0, 0));
  }
  return {{"states", game.num_states},   {"actions_per_agent", game.actions_per_agent},
          {"transition", transition},    {"rewards", rewards},
          {"discount", game.discount},   {"initial_dist", game.initial_dist}};
}

TabularMarkovGame game_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("", "game definition must be a JSON object");
  const auto states = require<std::size_t>(j, "states");
  const auto actions = require<std::vector<std::size_t>>(j, "actions_per_agent");
  const double discount = j.contains("discount") ? require<double>(j, "discount") : 0.95;
  for (std::size_t a : actions)
    if (a == 0) throw ConfigError("actions_per_agent", "every agent needs at least one action");
  if (states == 0 || actions.empty()) throw ConfigError("states", "game needs states and agents");

  TabularMarkovGame g;
  try {
    g = TabularMarkovGame::zeros(states, actions, discount);
  } catch (const UsageError& e) {
    throw ConfigError("states", e.what());
  }
  if (!j.contains("transition")) throw ConfigError("transition", "missing required key");
  if (!j.contains("rewards")) throw ConfigError("rewards", "missing required key");
  const auto& tr = j.at("transition");
  const auto& rw = j.at("rewards");
  if (!tr.is_array() || tr.size() != states) throw ConfigError("transition", "expected one entry per state");
  if (!rw.is_array() || rw.size() != states) throw ConfigError("rewards", "expected one entry per state");
  for (std::size_t s = 0; s < states; ++s) {
    unnest(g, tr[s], g.transition, s, states, 0, 0, "transition");
    unnest(g, rw[s], g.rewards, s, g.num_agents(), 0, 0, "rewards");
  }
  if (j.contains("initial_dist")) g.initial_dist = require<std::vector<double>>(j, "initial_dist");

  const auto validation = validate_game(g);
  if (!validation.ok()) throw ConfigError(validation.violations.front().code, validation.summary());
  return g;
}

TabularMarkovGame load_game_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open game file");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path, e.what());
  }
  return game_from_json(j);
}

}  // namespace mie
