#include "mie/sim.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <thread>

#include "mie/errors.hpp"

namespace mie {

void RunConfig::validate() const {
  if (horizon < 1) throw ConfigError("run.horizon", "must be at least 1");
  if (snapshot_cadence < 1) throw ConfigError("run.snapshot_cadence", "must be at least 1");
  if (schedule.belief_period < 1) throw ConfigError("run.schedule.belief_period", "must be at least 1");
  if (schedule.neural_period < 1) throw ConfigError("run.schedule.neural_period", "must be at least 1");
  if (schedule.policy_period < 1) throw ConfigError("run.schedule.policy_period", "must be at least 1");
}

nlohmann::json run_config_to_json(const RunConfig& config) {
  return {{"seed", config.seed},
          {"horizon", config.horizon},
          {"snapshot_cadence", config.snapshot_cadence},
          {"schedule",
           {{"belief_period", config.schedule.belief_period},
            {"neural_period", config.schedule.neural_period},
            {"policy_period", config.schedule.policy_period}}}};
}

namespace {

template <typename T>
T read_key(const nlohmann::json& j, const char* key, const std::string& path, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(path + key, "has the wrong type");
  }
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("run", "must be an object");
  RunConfig c;
  c.seed = read_key<std::uint64_t>(j, "seed", "run.", 0);
  c.horizon = read_key<std::uint64_t>(j, "horizon", "run.", 1);
  c.snapshot_cadence = read_key<std::uint64_t>(j, "snapshot_cadence", "run.", 10);
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    if (!s.is_object()) throw ConfigError("run.schedule", "must be an object");
    c.schedule.belief_period = read_key<std::uint64_t>(s, "belief_period", "run.schedule.", 1);
    c.schedule.neural_period = read_key<std::uint64_t>(s, "neural_period", "run.schedule.", 1);
    c.schedule.policy_period = read_key<std::uint64_t>(s, "policy_period", "run.schedule.", 1);
  }
  c.validate();
  return c;
}

std::string config_hash(const nlohmann::json& scenario, const RunConfig& config,
                        const std::optional<PerturbationSpec>& perturbation) {
  nlohmann::json run = run_config_to_json(config);
  run.erase("seed");
  const nlohmann::json canonical{{"scenario", scenario},
                                 {"run", run},
                                 {"perturbation", perturbation ? perturbation_to_json(*perturbation) : nlohmann::json(nullptr)}};
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

const Snapshot* InteractionLog::snapshot_at(std::uint64_t t) const {
  for (const auto& s : snapshots)
    if (s.t == t) return &s;
  if (final_state && final_state->t == t) return &*final_state;
  return nullptr;
}

namespace {

InteractionLog run(const Scenario& scenario, const RunConfig& config, const std::optional<PerturbationSpec>& p) {
  config.validate();
  if (p && p->tick >= config.horizon)
    throw ConfigError("perturbation.tick", "must be smaller than the horizon " + std::to_string(config.horizon));

  InteractionLog log;
  auto& h = log.header;
  h.scenario_kind = scenario.kind();
  h.scenario = scenario.to_json();
  h.run = config;
  h.seed = config.seed;
  h.num_agents = scenario.num_agents();
  if (const auto* g = scenario.game()) {
    h.num_states = g->num_states;
    h.actions_per_agent = g->actions_per_agent;
  }
  h.scalar_names = scenario.scalar_names();
  h.perturbation = p;
  h.config_hash = config_hash(h.scenario, config, p);

  std::unique_ptr<Scenario> perturbed_scenario;
  if (p) {
    if (!scenario.supports(p->target))
      throw ConfigError("perturbation.target", "scenario '" + scenario.kind() + "' does not support " +
                                                   std::string(to_string(p->target)));
    perturbed_scenario = scenario.perturbed(*p);
  }

  RngStreams rng = RngStreams::from_seed(config.seed, scenario.num_agents());
  JointState state = scenario.initial_state(rng.environment);
  const Scenario* active = &scenario;
  log.ticks.reserve(config.horizon);
  for (std::uint64_t t = 0; t < config.horizon; ++t) {
    if (p && t == p->tick) {
      active = perturbed_scenario.get();
      active->perturb_state(state, *p);
    }
    if (t % config.snapshot_cadence == 0) log.snapshots.push_back({t, state});
    log.ticks.push_back(active->advance(state, t, rng, config.schedule));
  }
  if (config.horizon % config.snapshot_cadence == 0) log.snapshots.push_back({config.horizon, state});
  log.final_state = Snapshot{config.horizon, std::move(state)};
  return log;
}

}  // namespace

InteractionLog rollout(const Scenario& scenario, const RunConfig& config) { return run(scenario, config, std::nullopt); }

InteractionLog rollout_with_perturbation(const Scenario& scenario, const RunConfig& config, const PerturbationSpec& p) {
  return run(scenario, config, p);
}

ReplayResult replay(const InteractionLog& log, const Scenario& scenario) {
  const auto& h = log.header;
  const std::string expected = config_hash(h.scenario, h.run, h.perturbation);
  if (expected != h.config_hash)
    throw ConfigError("config_hash", "header hash " + h.config_hash + " does not match its contents (" + expected + ")");
  if (scenario.to_json() != h.scenario)
    throw ConfigError("scenario", "scenario does not match the log header");

  RunConfig config = h.run;
  config.seed = h.seed;
  const InteractionLog fresh = h.perturbation ? rollout_with_perturbation(scenario, config, *h.perturbation)
                                              : rollout(scenario, config);
  ReplayResult result;
  const std::size_t n = std::min(fresh.ticks.size(), log.ticks.size());
  for (std::size_t k = 0; k < n; ++k) {
    if (!(fresh.ticks[k] == log.ticks[k])) {
      result.ok = false;
      result.divergence_tick = log.ticks[k].t;
      result.detail = "tick " + std::to_string(log.ticks[k].t) + " differs from re-simulation";
      return result;
    }
  }
  if (fresh.ticks.size() != log.ticks.size()) {
    result.ok = false;
    result.divergence_tick = n;
    result.detail = "log has " + std::to_string(log.ticks.size()) + " ticks, re-simulation has " +
                    std::to_string(fresh.ticks.size());
    return result;
  }
  if (fresh.snapshots != log.snapshots || fresh.final_state != log.final_state) {
    result.ok = false;
    result.detail = "recorded states differ from re-simulation";
  }
  return result;
}

// ---------------------------------------------------------------------------
// JSON Lines
// ---------------------------------------------------------------------------

namespace {

nlohmann::json header_to_json(const LogHeader& h) {
  nlohmann::json j{{"kind", "header"},
                   {"seed", h.seed},
                   {"config_hash", h.config_hash},
                   {"scenario_kind", h.scenario_kind},
                   {"scenario", h.scenario},
                   {"run", run_config_to_json(h.run)},
                   {"scalars", h.scalar_names},
                   {"dims",
                    {{"agents", h.num_agents}, {"states", h.num_states}, {"actions_per_agent", h.actions_per_agent}}}};
  if (h.perturbation) j["perturbation"] = perturbation_to_json(*h.perturbation);
  return j;
}

LogHeader header_from_json(const nlohmann::json& j) {
  LogHeader h;
  h.seed = j.at("seed").get<std::uint64_t>();
  h.config_hash = j.at("config_hash").get<std::string>();
  h.scenario_kind = j.at("scenario_kind").get<std::string>();
  h.scenario = j.at("scenario");
  h.run = run_config_from_json(j.at("run"));
  h.scalar_names = j.at("scalars").get<std::vector<std::string>>();
  const auto& dims = j.at("dims");
  h.num_agents = dims.at("agents").get<std::size_t>();
  h.num_states = dims.at("states").get<std::size_t>();
  h.actions_per_agent = dims.at("actions_per_agent").get<std::vector<std::size_t>>();
  if (j.contains("perturbation")) h.perturbation = perturbation_from_json(j.at("perturbation"));
  return h;
}

nlohmann::json tick_to_json(const TickRecord& r) {
  nlohmann::json obs = nlohmann::json::array();
  for (const auto& o : r.observations) obs.push_back(observation_to_json(o));
  return {{"kind", "tick"}, {"t", r.t},          {"s", r.state},  {"a", r.actions},
          {"r", r.rewards}, {"s_next", r.next_state}, {"obs", obs}, {"scalars", r.scalars}};
}

TickRecord tick_from_json(const nlohmann::json& j) {
  TickRecord r;
  r.t = j.at("t").get<std::uint64_t>();
  r.state = j.at("s").get<std::size_t>();
  r.actions = j.at("a").get<JointAction>();
  r.rewards = j.at("r").get<std::vector<double>>();
  r.next_state = j.at("s_next").get<std::size_t>();
  for (const auto& o : j.at("obs")) r.observations.push_back(observation_from_json(o));
  r.scalars = j.at("scalars").get<std::vector<double>>();
  return r;
}

}  // namespace

void write_log(const InteractionLog& log, std::ostream& out) {
  out << header_to_json(log.header).dump() << '\n';
  std::size_t next_snapshot = 0;
  auto flush_snapshots = [&](std::uint64_t upto) {
    while (next_snapshot < log.snapshots.size() && log.snapshots[next_snapshot].t <= upto) {
      const auto& s = log.snapshots[next_snapshot++];
      out << nlohmann::json{{"kind", "snapshot"}, {"t", s.t}, {"state", joint_state_to_json(s.state)}}.dump() << '\n';
    }
  };
  for (const auto& tick : log.ticks) {
    if (log.header.perturbation && log.header.perturbation->tick == tick.t)
      out << nlohmann::json{{"kind", "perturbation"}, {"t", tick.t},
                            {"spec", perturbation_to_json(*log.header.perturbation)}}
                 .dump()
          << '\n';
    flush_snapshots(tick.t);
    out << tick_to_json(tick).dump() << '\n';
  }
  flush_snapshots(std::numeric_limits<std::uint64_t>::max());
  if (log.final_state)
    out << nlohmann::json{{"kind", "final"}, {"t", log.final_state->t},
                          {"state", joint_state_to_json(log.final_state->state)}}
               .dump()
        << '\n';
}

std::string serialize_log(const InteractionLog& log) {
  std::ostringstream out;
  write_log(log, out);
  return out.str();
}

InteractionLog read_log(std::istream& in) {
  InteractionLog log;
  std::string line;
  std::size_t line_no = 0;
  std::int64_t last_tick = -1;
  bool have_header = false;
  bool have_final = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (have_final) throw LogFormatError(line_no, last_tick, "record after the final state");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw LogFormatError(line_no, last_tick, std::string("malformed JSON: ") + e.what());
    }
    try {
      const std::string kind = j.at("kind").get<std::string>();
      if (!have_header) {
        if (kind != "header") throw LogFormatError(line_no, last_tick, "first record must be the header");
        log.header = header_from_json(j);
        have_header = true;
        continue;
      }
      if (kind == "tick") {
        auto tick = tick_from_json(j);
        if (tick.t != log.ticks.size())
          throw LogFormatError(line_no, last_tick, "expected tick " + std::to_string(log.ticks.size()) + ", found " +
                                                       std::to_string(tick.t));
        if (tick.actions.size() != log.header.num_agents)
          throw LogFormatError(line_no, last_tick, "tick has the wrong number of actions");
        last_tick = std::int64_t(tick.t);
        log.ticks.push_back(std::move(tick));
      } else if (kind == "snapshot") {
        log.snapshots.push_back({j.at("t").get<std::uint64_t>(), joint_state_from_json(j.at("state"))});
      } else if (kind == "perturbation") {
        const auto spec = perturbation_from_json(j.at("spec"));
        if (!log.header.perturbation || !(spec == *log.header.perturbation))
          throw LogFormatError(line_no, last_tick, "perturbation record does not match the header");
      } else if (kind == "final") {
        log.final_state = Snapshot{j.at("t").get<std::uint64_t>(), joint_state_from_json(j.at("state"))};
        have_final = true;
      } else {
        throw LogFormatError(line_no, last_tick, "unknown record kind '" + kind + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw LogFormatError(line_no, last_tick, std::string("bad record: ") + e.what());
    } catch (const ConfigError& e) {
      throw LogFormatError(line_no, last_tick, e.what());
    }
  }
  if (!have_header) throw LogFormatError(line_no, last_tick, "log is empty");
  if (!have_final) throw LogFormatError(line_no, last_tick, "log is truncated (no final state)");
  if (log.ticks.size() != log.header.run.horizon)
    throw LogFormatError(line_no, last_tick, "log has " + std::to_string(log.ticks.size()) + " ticks, header says " +
                                                 std::to_string(log.header.run.horizon));
  return log;
}

InteractionLog parse_log(const std::string& text) {
  std::istringstream in(text);
  return read_log(in);
}

InteractionLog load_log_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LogFormatError(0, -1, "cannot open " + path);
  return read_log(in);
}

namespace {

void put_number(std::ostream& out, double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.write(buf, res.ptr - buf);
}

}  // namespace

void write_series_csv(const InteractionLog& log, std::ostream& out) {
  out << "t";
  for (const auto& name : log.header.scalar_names) out << ',' << name;
  for (std::size_t i = 0; i < log.header.num_agents; ++i) out << ",r_" << i;
  out << '\n';
  for (const auto& tick : log.ticks) {
    out << tick.t;
    for (double v : tick.scalars) {
      out << ',';
      put_number(out, v);
    }
    for (double r : tick.rewards) {
      out << ',';
      put_number(out, r);
    }
    out << '\n';
  }
}

std::size_t default_job_count() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

}  // namespace mie
