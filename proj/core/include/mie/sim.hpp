#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mie/system.hpp"

namespace mie {

struct RunConfig {
  std::uint64_t seed = 0;
  std::uint64_t horizon = 1;
  std::uint64_t snapshot_cadence = 10;
  OperatorSchedule schedule;

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

nlohmann::json run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Hash of everything that determines a run except the seed: the scenario
/// configuration, run parameters and optional perturbation. FNV-1a 64 over
/// the canonical JSON dump, rendered as 16 hex digits.
std::string config_hash(const nlohmann::json& scenario, const RunConfig& config,
                        const std::optional<PerturbationSpec>& perturbation);

struct Snapshot {
  std::uint64_t t = 0;
  JointState state;

  bool operator==(const Snapshot&) const = default;
};

struct LogHeader {
  std::string scenario_kind;
  nlohmann::json scenario;
  RunConfig run;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::size_t num_agents = 0;
  std::size_t num_states = 0;
  std::vector<std::size_t> actions_per_agent;
  std::vector<std::string> scalar_names;
  std::optional<PerturbationSpec> perturbation;

  bool operator==(const LogHeader&) const = default;
};

/// Ticks are stored in order; snapshot k is the state z_t before tick t for
/// t a multiple of the cadence (t = T included when aligned). `final_state`
/// is z_T.
struct InteractionLog {
  LogHeader header;
  std::vector<TickRecord> ticks;
  std::vector<Snapshot> snapshots;
  std::optional<Snapshot> final_state;

  const Snapshot* snapshot_at(std::uint64_t t) const;
  bool operator==(const InteractionLog&) const = default;
};

/// Exactly `config.horizon` applications of Phi.
InteractionLog rollout(const Scenario& scenario, const RunConfig& config);

/// As rollout, with `p` applied between ticks t_p - 1 and t_p.
InteractionLog rollout_with_perturbation(const Scenario& scenario, const RunConfig& config,
                                         const PerturbationSpec& p);

struct ReplayResult {
  bool ok = true;
  std::optional<std::uint64_t> divergence_tick;
  std::string detail;
};

/// Re-simulates from the log's header and compares tick by tick. Throws
/// ConfigError when the header's hash does not match its contents.
ReplayResult replay(const InteractionLog& log, const Scenario& scenario);

/// JSON Lines: header line, then snapshot/perturbation/tick records in
/// time order, then the final-state line.
void write_log(const InteractionLog& log, std::ostream& out);
std::string serialize_log(const InteractionLog& log);

/// Throws LogFormatError naming the line and last good tick.
InteractionLog read_log(std::istream& in);
InteractionLog parse_log(const std::string& text);
InteractionLog load_log_file(const std::string& path);

/// t, scenario scalars, then r_i per agent.
void write_series_csv(const InteractionLog& log, std::ostream& out);

/// Runs `count` independent jobs on at most `jobs` worker threads. Result
/// order follows job index, not completion order.
template <typename Result>
std::vector<Result> run_parallel(std::size_t count, std::size_t jobs, const std::function<Result(std::size_t)>& job);

std::size_t default_job_count();

}  // namespace mie

#include "mie/detail/parallel.hpp"
