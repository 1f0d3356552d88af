#include "mie/system.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "mie/errors.hpp"

namespace mie {

namespace {

constexpr std::array<std::pair<PerturbationTarget, std::string_view>, 6> kTargetNames{{
    {PerturbationTarget::reward_contingency, "reward_contingency"},
    {PerturbationTarget::policy, "policy"},
    {PerturbationTarget::belief, "belief"},
    {PerturbationTarget::neural_params, "neural_params"},
    {PerturbationTarget::observation_mask, "observation_mask"},
    {PerturbationTarget::decoder_mapping, "decoder_mapping"},
}};

bool is_state_level(PerturbationTarget t) {
  return t == PerturbationTarget::policy || t == PerturbationTarget::belief ||
         t == PerturbationTarget::neural_params || t == PerturbationTarget::decoder_mapping;
}

void renormalize(std::span<double> probs) {
  double sum = 0.0;
  for (double& p : probs) {
    p = std::max(p, 0.0);
    sum += p;
  }
  if (!(sum > 0.0)) throw UsageError("perturbation left a distribution with no mass");
  for (double& p : probs) p /= sum;
}

}  // namespace

std::string_view to_string(PerturbationTarget target) {
  for (const auto& [t, name] : kTargetNames)
    if (t == target) return name;
  return "unknown";
}

PerturbationTarget perturbation_target_from_string(std::string_view name) {
  for (const auto& [t, n] : kTargetNames)
    if (n == name) return t;
  throw ConfigError("perturbation.target", "unknown target '" + std::string(name) + "'");
}

nlohmann::json perturbation_to_json(const PerturbationSpec& p) {
  return {{"tick", p.tick},
          {"target", std::string(to_string(p.target))},
          {"agent", p.agent},
          {"mode", p.mode == PerturbationMode::additive ? "additive" : "replace"},
          {"payload", p.payload},
          {"magnitude", p.magnitude}};
}

PerturbationSpec perturbation_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("perturbation", "must be an object");
  PerturbationSpec p;
  try {
    if (!j.contains("tick")) throw ConfigError("perturbation.tick", "missing required key");
    if (!j.contains("target")) throw ConfigError("perturbation.target", "missing required key");
    p.tick = j.at("tick").get<std::uint64_t>();
    p.target = perturbation_target_from_string(j.at("target").get<std::string>());
    p.agent = j.value("agent", std::size_t{0});
    const std::string mode = j.value("mode", std::string("additive"));
    if (mode == "additive")
      p.mode = PerturbationMode::additive;
    else if (mode == "replace")
      p.mode = PerturbationMode::replace;
    else
      throw ConfigError("perturbation.mode", "expected 'additive' or 'replace'");
    p.payload = j.value("payload", std::vector<double>{});
    p.magnitude = j.value("magnitude", 1.0);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("perturbation", e.what());
  }
  if (!std::isfinite(p.magnitude)) throw ConfigError("perturbation.magnitude", "must be finite");
  return p;
}

void apply_delta(std::span<double> values, const PerturbationSpec& p) {
  if (p.magnitude == 0.0) return;
  if (p.payload.size() != 1 && p.payload.size() != values.size())
    throw UsageError("perturbation payload has " + std::to_string(p.payload.size()) + " entries, target has " +
                     std::to_string(values.size()));
  for (std::size_t k = 0; k < values.size(); ++k) {
    const double v = p.payload.size() == 1 ? p.payload[0] : p.payload[k];
    if (p.mode == PerturbationMode::additive)
      values[k] += p.magnitude * v;
    else
      values[k] += p.magnitude * (v - values[k]);
  }
}

bool Scenario::supports(PerturbationTarget target) const {
  const auto targets = perturbation_targets();
  return std::find(targets.begin(), targets.end(), target) != targets.end();
}

std::unique_ptr<Scenario> Scenario::perturbed(const PerturbationSpec& p) const {
  if (!supports(p.target))
    throw UsageError("scenario '" + kind() + "' does not support perturbation target " +
                     std::string(to_string(p.target)));
  if (!is_state_level(p.target))
    throw UsageError("scenario '" + kind() + "' has no environment-level handler for " +
                     std::string(to_string(p.target)));
  return clone();
}

void Scenario::perturb_state(JointState& state, const PerturbationSpec& p) const {
  if (!supports(p.target))
    throw UsageError("scenario '" + kind() + "' does not support perturbation target " +
                     std::string(to_string(p.target)));
  if (!is_state_level(p.target) || p.magnitude == 0.0) return;
  if (p.agent >= state.agents.size()) throw UsageError("perturbation agent out of range");
  auto& agent = state.agents[p.agent];
  switch (p.target) {
    case PerturbationTarget::neural_params:
    case PerturbationTarget::decoder_mapping:
      apply_delta(agent.theta.values, p);
      break;
    case PerturbationTarget::belief:
      apply_delta(agent.belief.values(), p);
      if (agent.belief.kind == BeliefKind::categorical) renormalize(agent.belief.probs);
      break;
    case PerturbationTarget::policy: {
      auto& table = agent.policy.table;
      apply_delta(table.probs, p);
      for (std::size_t s = 0; s < table.num_states; ++s) renormalize(table.row(s));
      break;
    }
    default:
      break;
  }
  resync(state);
}

// ---------------------------------------------------------------------------
// Flattening
// ---------------------------------------------------------------------------

namespace {

void flatten_belief(const BeliefState& b, std::vector<double>& out) {
  if (b.kind == BeliefKind::categorical)
    out.insert(out.end(), b.probs.begin(), b.probs.end() - (b.probs.empty() ? 0 : 1));
  else
    out.insert(out.end(), b.mean.begin(), b.mean.end());
  for (const auto& n : b.nested) flatten_belief(n, out);
}

void unflatten_belief(BeliefState& b, std::span<const double> x, std::size_t& pos) {
  if (b.kind == BeliefKind::categorical) {
    if (!b.probs.empty()) {
      double rest = 1.0;
      for (std::size_t k = 0; k + 1 < b.probs.size(); ++k) {
        b.probs[k] = x[pos++];
        rest -= b.probs[k];
      }
      b.probs.back() = rest;
    }
  } else {
    for (double& m : b.mean) m = x[pos++];
  }
  for (auto& n : b.nested) unflatten_belief(n, x, pos);
}

void name_belief(const BeliefState& b, const std::string& prefix, std::vector<std::string>& out) {
  const std::size_t n = b.kind == BeliefKind::categorical ? (b.probs.empty() ? 0 : b.probs.size() - 1) : b.mean.size();
  for (std::size_t k = 0; k < n; ++k) out.push_back(prefix + "[" + std::to_string(k) + "]");
  for (const auto& nested : b.nested) name_belief(nested, prefix + ".nested", out);
}

void belief_l1(const BeliefState& a, const BeliefState& b, double& acc) {
  const auto va = a.values();
  const auto vb = b.values();
  if (va.size() != vb.size()) throw UsageError("level_drift: belief shapes differ");
  for (std::size_t k = 0; k < va.size(); ++k) acc += std::abs(va[k] - vb[k]);
  if (a.nested.size() != b.nested.size()) throw UsageError("level_drift: nested belief shapes differ");
  for (std::size_t k = 0; k < a.nested.size(); ++k) belief_l1(a.nested[k], b.nested[k], acc);
}

}  // namespace

std::vector<double> flatten(const JointState& state) {
  std::vector<double> out;
  for (const auto& a : state.agents) out.insert(out.end(), a.theta.values.begin(), a.theta.values.end());
  for (const auto& a : state.agents) flatten_belief(a.belief, out);
  for (const auto& a : state.agents) {
    const auto& t = a.policy.table;
    if (t.num_actions == 0) continue;
    for (std::size_t s = 0; s < t.num_states; ++s) {
      const auto row = t.row(s);
      out.insert(out.end(), row.begin(), row.end() - 1);
    }
  }
  return out;
}

JointState unflatten(const JointState& like, std::span<const double> x) {
  const auto sizes = level_sizes(like);
  if (x.size() != sizes.theta + sizes.belief + sizes.policy)
    throw UsageError("unflatten: vector has " + std::to_string(x.size()) + " entries, state has " +
                     std::to_string(sizes.theta + sizes.belief + sizes.policy));
  JointState out = like;
  std::size_t pos = 0;
  for (auto& a : out.agents)
    for (double& v : a.theta.values) v = x[pos++];
  for (auto& a : out.agents) unflatten_belief(a.belief, x, pos);
  for (auto& a : out.agents) {
    auto& t = a.policy.table;
    if (t.num_actions == 0) continue;
    for (std::size_t s = 0; s < t.num_states; ++s) {
      auto row = t.row(s);
      double rest = 1.0;
      for (std::size_t k = 0; k + 1 < row.size(); ++k) {
        row[k] = x[pos++];
        rest -= row[k];
      }
      row.back() = rest;
    }
  }
  return out;
}

std::vector<std::string> coordinate_names(const JointState& state) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < state.agents.size(); ++i)
    for (std::size_t k = 0; k < state.agents[i].theta.values.size(); ++k)
      out.push_back("theta[" + std::to_string(i) + "][" + std::to_string(k) + "]");
  for (std::size_t i = 0; i < state.agents.size(); ++i)
    name_belief(state.agents[i].belief, "belief[" + std::to_string(i) + "]", out);
  for (std::size_t i = 0; i < state.agents.size(); ++i) {
    const auto& t = state.agents[i].policy.table;
    for (std::size_t s = 0; s < t.num_states; ++s)
      for (std::size_t a = 0; a + 1 < t.num_actions; ++a)
        out.push_back("policy[" + std::to_string(i) + "][" + std::to_string(s) + "][" + std::to_string(a) + "]");
  }
  return out;
}

LevelSizes level_sizes(const JointState& state) {
  LevelSizes sizes;
  std::vector<double> scratch;
  for (const auto& a : state.agents) {
    sizes.theta += a.theta.values.size();
    scratch.clear();
    flatten_belief(a.belief, scratch);
    sizes.belief += scratch.size();
    const auto& t = a.policy.table;
    if (t.num_actions > 0) sizes.policy += t.num_states * (t.num_actions - 1);
  }
  return sizes;
}

LevelDrift level_drift(const JointState& from, const JointState& to) {
  if (from.agents.size() != to.agents.size()) throw UsageError("level_drift: agent counts differ");
  LevelDrift d;
  double theta_sq = 0.0;
  for (std::size_t i = 0; i < from.agents.size(); ++i) {
    const auto& a = from.agents[i];
    const auto& b = to.agents[i];
    if (a.theta.values.size() != b.theta.values.size()) throw UsageError("level_drift: theta shapes differ");
    for (std::size_t k = 0; k < a.theta.values.size(); ++k) {
      const double diff = a.theta.values[k] - b.theta.values[k];
      theta_sq += diff * diff;
    }
    belief_l1(a.belief, b.belief, d.belief);
    if (a.policy.table.probs.size() != b.policy.table.probs.size())
      throw UsageError("level_drift: policy shapes differ");
    double l1 = 0.0;
    for (std::size_t k = 0; k < a.policy.table.probs.size(); ++k)
      l1 += std::abs(a.policy.table.probs[k] - b.policy.table.probs[k]);
    d.policy += 0.5 * l1;
  }
  d.theta = std::sqrt(theta_sq);
  return d;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace {

nlohmann::json belief_to_json(const BeliefState& b) {
  nlohmann::json j{{"kind", b.kind == BeliefKind::categorical ? "categorical" : "gaussian"},
                   {"depth", b.depth},
                   {"count", b.count}};
  if (b.kind == BeliefKind::categorical) {
    j["probs"] = b.probs;
  } else {
    j["mean"] = b.mean;
    j["covariance"] = b.covariance;
  }
  if (!b.nested.empty()) {
    j["nested"] = nlohmann::json::array();
    for (const auto& n : b.nested) j["nested"].push_back(belief_to_json(n));
  }
  return j;
}

BeliefState belief_from_json(const nlohmann::json& j) {
  BeliefState b;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "categorical") {
    b.kind = BeliefKind::categorical;
    b.probs = j.at("probs").get<std::vector<double>>();
  } else if (kind == "gaussian") {
    b.kind = BeliefKind::gaussian;
    b.mean = j.at("mean").get<std::vector<double>>();
    b.covariance = j.value("covariance", std::vector<double>{});
  } else {
    throw ConfigError("belief.kind", "unknown belief kind '" + kind + "'");
  }
  b.depth = j.value("depth", 1);
  b.count = j.value("count", 0.0);
  if (j.contains("nested"))
    for (const auto& n : j.at("nested")) b.nested.push_back(belief_from_json(n));
  return b;
}

}  // namespace

nlohmann::json joint_state_to_json(const JointState& state) {
  nlohmann::json agents = nlohmann::json::array();
  for (const auto& a : state.agents) {
    agents.push_back({{"theta", {{"values", a.theta.values}, {"learning_rate", a.theta.learning_rate}}},
                      {"belief", belief_to_json(a.belief)},
                      {"policy",
                       {{"kind", a.policy.kind == PolicyKind::tabular ? "tabular" : "softmax_of_q"},
                        {"states", a.policy.table.num_states},
                        {"actions", a.policy.table.num_actions},
                        {"probs", a.policy.table.probs},
                        {"beta", a.policy.beta},
                        {"belief_weight", a.policy.belief_weight}}}});
  }
  return {{"env_state", state.env_state}, {"agents", agents}, {"aux", state.aux}};
}

JointState joint_state_from_json(const nlohmann::json& j) {
  JointState state;
  try {
    state.env_state = j.at("env_state").get<std::size_t>();
    state.aux = j.value("aux", std::vector<double>{});
    for (const auto& a : j.at("agents")) {
      MultilevelAgentState agent;
      agent.theta.values = a.at("theta").at("values").get<std::vector<double>>();
      agent.theta.learning_rate = a.at("theta").value("learning_rate", 0.1);
      agent.belief = belief_from_json(a.at("belief"));
      const auto& p = a.at("policy");
      agent.policy.kind = p.at("kind").get<std::string>() == "tabular" ? PolicyKind::tabular : PolicyKind::softmax_of_q;
      agent.policy.table.num_states = p.at("states").get<std::size_t>();
      agent.policy.table.num_actions = p.at("actions").get<std::size_t>();
      agent.policy.table.probs = p.at("probs").get<std::vector<double>>();
      agent.policy.beta = p.value("beta", 1.0);
      agent.policy.belief_weight = p.value("belief_weight", 0.0);
      if (agent.policy.table.probs.size() != agent.policy.table.num_states * agent.policy.table.num_actions)
        throw ConfigError("policy", "table size does not match its shape");
      state.agents.push_back(std::move(agent));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("state", e.what());
  }
  return state;
}

nlohmann::json observation_to_json(const Observation& o) {
  nlohmann::json j = nlohmann::json::object();
  if (o.state) j["s"] = *o.state;
  if (o.next_state) j["s_next"] = *o.next_state;
  if (o.opponent_actions) j["opp"] = *o.opponent_actions;
  if (o.reward) j["r"] = *o.reward;
  if (o.signal) j["sig"] = *o.signal;
  return j;
}

Observation observation_from_json(const nlohmann::json& j) {
  Observation o;
  if (j.contains("s")) o.state = j.at("s").get<std::size_t>();
  if (j.contains("s_next")) o.next_state = j.at("s_next").get<std::size_t>();
  if (j.contains("opp")) o.opponent_actions = j.at("opp").get<std::vector<std::size_t>>();
  if (j.contains("r")) o.reward = j.at("r").get<double>();
  if (j.contains("sig")) o.signal = j.at("sig").get<double>();
  return o;
}

}  // namespace mie
