#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mie/errors.hpp"
#include "mie/scenarios.hpp"
#include "mie_lab/cli.hpp"

namespace mie::lab {

namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> jobs;
  std::string log;
  bool quiet = false;
};

std::size_t resolve_jobs(const Options& o) {
  if (o.jobs) {
    if (*o.jobs == 0) throw ConfigError("--jobs", "must be at least 1");
    return *o.jobs;
  }
  if (const char* env = std::getenv("MIE_LAB_JOBS"); env && *env) {
    std::size_t n = 0;
    const std::string_view s(env);
    const auto r = std::from_chars(s.data(), s.data() + s.size(), n);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size() || n == 0)
      throw ConfigError("MIE_LAB_JOBS", "must be a positive integer");
    return n;
  }
  return default_job_count();
}

ExperimentConfig experiment(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config", "required for this command");
  auto c = load_experiment(o.config);
  if (o.seed) c.run.seed = *o.seed;
  return c;
}

fs::path output_dir(const Options& o, const std::string& fallback) {
  const fs::path dir = o.out.empty() ? fs::path(fallback) : fs::path(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("output", "cannot create directory '" + dir.string() + "'");
  return dir;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  f << content;
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_file(path, j.dump(2) + "\n"); }

std::string csv_preamble(const std::string& hash, std::uint64_t seed) {
  return "# config_hash=" + hash + " seed=" + std::to_string(seed) + "\n";
}

// Timestamps and the command line live here and nowhere else.
void write_meta(const fs::path& dir, const std::string& command, const std::vector<std::string>& args,
                const std::string& hash, std::uint64_t seed, std::size_t jobs) {
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  write_json(dir / "run_meta.json", {{"command", command},
                                     {"args", args},
                                     {"config_hash", hash},
                                     {"seed", seed},
                                     {"jobs", jobs},
                                     {"unix_time_ms", std::chrono::duration_cast<std::chrono::milliseconds>(now).count()},
                                     {"version", "0.1.0"}});
}

nlohmann::json optional_tick(const std::optional<std::uint64_t>& t) {
  return t ? nlohmann::json(*t) : nlohmann::json(nullptr);
}

std::string drift_csv(const InteractionLog& log, const ConvergenceReport& conv) {
  std::ostringstream out;
  out << csv_preamble(log.header.config_hash, log.header.seed);
  out << "t,theta_step,belief_step,policy_step,distance\n";
  const auto theta = level_step_norms(log, Level::theta);
  const auto belief = level_step_norms(log, Level::belief);
  const auto policy = level_step_norms(log, Level::policy);
  out.precision(17);
  for (std::size_t k = 0; k < theta.size(); ++k) {
    out << conv.distance_ticks.at(k) << ',' << theta[k] << ',' << belief[k] << ',' << policy[k] << ','
        << conv.distance.at(k) << '\n';
  }
  return out.str();
}

InteractionLog load_log(const Options& o) {
  const std::string path = o.log.empty() ? (fs::path(o.out.empty() ? "out" : o.out) / "log.jsonl").string() : o.log;
  return load_log_file(path);
}

std::unique_ptr<Scenario> scenario_of(const LogHeader& h) {
  try {
    auto s = make_scenario(h.scenario);
    return h.perturbation ? s->perturbed(*h.perturbation) : std::move(s);
  } catch (const ConfigError& e) {
    throw LogFormatError(1, -1, "header scenario is invalid: " + std::string(e.what()));
  }
}

// ---------------------------------------------------------------------------

int cmd_simulate(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const auto config = experiment(o);
  const fs::path dir = output_dir(o, config.output);
  const auto scenario = make_scenario(config.scenario);
  const auto log = config.perturbation ? rollout_with_perturbation(*scenario, config.run, *config.perturbation)
                                       : rollout(*scenario, config.run);
  const auto active = config.perturbation ? scenario->perturbed(*config.perturbation) : scenario->clone();

  write_file(dir / "log.jsonl", serialize_log(log));
  std::ostringstream series;
  series << csv_preamble(log.header.config_hash, log.header.seed);
  write_series_csv(log, series);
  write_file(dir / "series.csv", series.str());

  nlohmann::json summary{{"config_hash", log.header.config_hash},
                         {"seed", log.header.seed},
                         {"scenario", log.header.scenario_kind},
                         {"horizon", config.run.horizon}};
  if (log.snapshots.size() + (log.final_state ? 1 : 0) >= 2) {
    const auto conv = convergence_report(log, config.tolerances, config.weights, *active);
    summary["convergence"] = convergence_report_to_json(conv);
    summary["final_distance"] = conv.distance.empty() ? nlohmann::json(nullptr) : nlohmann::json(conv.distance.back());
    write_file(dir / "drift.csv", drift_csv(log, conv));
  }
  if (log.final_state) summary["final_brgap"] = active->behavioral_gaps(log.final_state->state);
  write_json(dir / "summary.json", summary);
  write_meta(dir, "simulate", args, log.header.config_hash, log.header.seed, 1);

  if (!o.quiet) {
    out << "simulate: " << log.header.scenario_kind << " T=" << config.run.horizon << " seed=" << log.header.seed
        << " hash=" << log.header.config_hash << '\n';
    if (summary.contains("convergence")) {
      const auto& c = summary["convergence"];
      out << "  final E_t: " << summary["final_distance"].dump() << '\n';
      out << "  drift ticks: theta=" << c["theta_tick"].dump() << " belief=" << c["belief_tick"].dump()
          << " policy=" << c["policy_tick"].dump() << " joint=" << c["joint_tick"].dump() << '\n';
    }
    out << "  wrote " << dir.string() << '\n';
  }
  return kOk;
}

int cmd_analyze(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const auto log = load_log(o);
  ExperimentConfig config;
  if (!o.config.empty()) {
    config = experiment(o);
    const auto hash = config_hash(config.scenario, config.run, config.perturbation);
    if (hash != log.header.config_hash)
      throw LogFormatError(1, -1, "log config hash " + log.header.config_hash + " does not match the config (" + hash + ")");
    if (config.run.seed != log.header.seed)
      throw LogFormatError(1, -1, "log seed " + std::to_string(log.header.seed) + " does not match the config seed " +
                                      std::to_string(config.run.seed));
  } else {
    config.scenario = log.header.scenario;
    config.run = log.header.run;
    config.perturbation = log.header.perturbation;
    if (o.seed && *o.seed != log.header.seed) throw LogFormatError(1, -1, "--seed does not match the log seed");
  }
  const auto scenario = scenario_of(log.header);
  const auto analysis = analyze_log(log, *scenario, config);
  const fs::path dir = output_dir(o, config.output);
  if (!analysis.equilibrium.is_null()) write_json(dir / "equilibrium.json", analysis.equilibrium);
  if (!analysis.stability.is_null()) write_json(dir / "stability.json", analysis.stability);
  write_meta(dir, "analyze", args, log.header.config_hash, log.header.seed, 1);
  if (!o.quiet) {
    if (!analysis.equilibrium.is_null())
      out << "analyze: verdict=" << analysis.equilibrium["verdict"].get<std::string>()
          << " satisfied=" << analysis.equilibrium["satisfied"].get<std::string>() << '\n';
    if (analysis.stability.contains("classification"))
      out << "  stability=" << analysis.stability["classification"].get<std::string>()
          << " spectral_radius=" << analysis.stability["spectral_radius"].dump() << '\n';
    else if (analysis.stability.contains("skipped"))
      out << "  stability skipped: " << analysis.stability["skipped"].get<std::string>() << '\n';
  }
  return kOk;
}

int cmd_sweep(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const auto config = experiment(o);
  if (!config.sweep) throw ConfigError("sweep", "missing required key");
  const std::size_t jobs = resolve_jobs(o);
  const fs::path dir = output_dir(o, config.output);
  const auto result = run_sweep(config, jobs);
  const std::string stem = config.sweep->kind == "basin" ? "basin" : "sweep";
  write_file(dir / (stem + ".csv"), result.csv);
  write_json(dir / (stem + ".json"), result.report);
  write_meta(dir, "sweep", args, result.report["config_hash"].get<std::string>(), config.run.seed, jobs);
  if (!o.quiet) {
    out << "sweep: " << result.report["cells"].size() << " cells";
    if (result.report.contains("labels")) out << " labels=" << result.report["labels"].dump();
    if (result.report.contains("attractors")) out << " attractors=" << result.report["attractors"].size();
    out << "\n  wrote " << dir.string() << '\n';
  }
  return kOk;
}

nlohmann::json belief_filters(const InteractionLog& log, const EstimateOptions& e, std::string& csv) {
  nlohmann::json filters = nlohmann::json::array();
  std::ostringstream rows;
  rows.precision(17);
  for (std::size_t i = 0; i < log.header.num_agents; ++i) {
    std::vector<Eigen::VectorXd> ys;
    std::vector<std::uint64_t> ticks;
    for (const auto& t : log.ticks) {
      if (i < t.observations.size() && t.observations[i].signal) {
        ys.push_back(Eigen::VectorXd::Constant(1, *t.observations[i].signal));
        ticks.push_back(t.t);
      }
    }
    if (ys.empty()) {
      filters.push_back({{"agent", i}, {"skipped", "no observation signals"}});
      continue;
    }
    LinearGaussianModel m;
    m.transition = Eigen::MatrixXd::Identity(1, 1);
    m.observation = Eigen::MatrixXd::Identity(1, 1);
    m.process_noise = Eigen::MatrixXd::Constant(1, 1, e.process_noise);
    m.observation_noise = Eigen::MatrixXd::Constant(1, 1, e.observation_noise);
    m.initial_mean = ys.front();
    m.initial_covariance = Eigen::MatrixXd::Constant(1, 1, e.observation_noise);
    const auto k = kalman_belief_filter(m, ys);
    for (std::size_t n = 0; n < ys.size(); ++n)
      rows << i << ',' << ticks[n] << ',' << ys[n](0) << ',' << k.means[n](0) << ',' << k.covariances[n](0, 0) << '\n';
    filters.push_back({{"agent", i},
                       {"observations", ys.size()},
                       {"final_mean", k.means.back()(0)},
                       {"final_variance", k.covariances.back()(0, 0)},
                       {"log_likelihood", k.log_likelihood}});
  }
  csv += "agent,t,signal,mean,variance\n" + rows.str();
  return filters;
}

nlohmann::json shared_subspace(const InteractionLog& log, const EstimateOptions& e) {
  if (log.header.num_agents != 2) return {{"skipped", "needs exactly two agents"}};
  std::vector<const JointState*> states;
  for (const auto& s : log.snapshots) states.push_back(&s.state);
  if (log.final_state && (log.snapshots.empty() || log.final_state->t > log.snapshots.back().t))
    states.push_back(&log.final_state->state);
  if (states.empty()) return {{"skipped", "no snapshots"}};
  const std::size_t dx = states.front()->agents[0].theta.values.size();
  const std::size_t dy = states.front()->agents[1].theta.values.size();
  if (dx == 0 || dy == 0) return {{"skipped", "log has no paired neural series"}};
  if (states.size() < std::max(dx, dy) + 2)
    return {{"skipped", "too few snapshots (" + std::to_string(states.size()) + ") for the neural dimensions"}};
  Eigen::MatrixXd x(states.size(), dx);
  Eigen::MatrixXd y(states.size(), dy);
  for (std::size_t r = 0; r < states.size(); ++r) {
    for (std::size_t c = 0; c < dx; ++c) x(r, c) = states[r]->agents[0].theta.values[c];
    for (std::size_t c = 0; c < dy; ++c) y(r, c) = states[r]->agents[1].theta.values[c];
  }
  try {
    const auto r = cca_shared_subspace(x, y, std::min({e.cca_dim, dx, dy}));
    return {{"correlations", r.correlations}, {"ridge", r.ridge}, {"samples", states.size()}};
  } catch (const NumericalError& err) {
    return {{"skipped", err.what()}};
  }
}

int cmd_estimate(const Options& o, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const auto log = load_log(o);
  ExperimentConfig config;
  if (!o.config.empty()) config = experiment(o);
  const auto& e = config.estimate;
  const auto scenario = scenario_of(log.header);
  const fs::path dir = output_dir(o, config.output);

  nlohmann::json report{{"config_hash", log.header.config_hash}, {"seed", log.header.seed}};
  nlohmann::json warnings = nlohmann::json::array();

  std::ostringstream policy_csv;
  policy_csv << csv_preamble(log.header.config_hash, log.header.seed) << "agent,state,action,count,probability\n";
  policy_csv.precision(17);
  std::vector<EmpiricalPolicy> policies;
  nlohmann::json policies_json = nlohmann::json::array();
  const bool tabular = log.header.num_states > 0 && log.header.actions_per_agent.size() == log.header.num_agents;
  if (!tabular) warnings.push_back({{"analysis", "empirical_policy"}, {"reason", "log has no tabular game"}});
  for (std::size_t i = 0; tabular && i < log.header.num_agents; ++i) {
    policies.push_back(empirical_policy(log, i, e.smoothing));
    const auto& p = policies.back();
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t s = 0; s < p.num_states; ++s) {
      rows.push_back(p.defined[s] ? nlohmann::json(std::vector<double>(p.distribution.row(s).begin(),
                                                                        p.distribution.row(s).end()))
                                  : nlohmann::json(nullptr));
      for (std::size_t a = 0; a < p.num_actions; ++a)
        policy_csv << i << ',' << s << ',' << a << ',' << p.counts[s * p.num_actions + a] << ','
                   << p.distribution(s, a) << '\n';
    }
    policies_json.push_back({{"agent", i}, {"policy", rows}});
  }
  if (tabular) report["empirical_policy"] = policies_json;

  if (tabular && log.header.num_agents == 2 && log.final_state) {
    nlohmann::json divergences = nlohmann::json::array();
    for (std::size_t i = 0; i < 2; ++i) {
      const auto& b = log.final_state->state.agents[i].belief;
      const auto& opp = policies[1 - i];
      if (b.kind != BeliefKind::categorical || b.probs.size() != opp.num_actions) continue;
      nlohmann::json per_state = nlohmann::json::array();
      for (std::size_t s = 0; s < opp.num_states; ++s) {
        if (!opp.defined[s]) {
          per_state.push_back(nullptr);
          continue;
        }
        const auto d = belief_policy_divergence(b.probs, opp, s);
        per_state.push_back(d.infinite ? nlohmann::json("inf") : nlohmann::json(d.value));
      }
      divergences.push_back({{"agent", i}, {"kl", per_state}});
    }
    report["belief_policy_divergence"] = divergences;
  }

  std::string filter_csv = csv_preamble(log.header.config_hash, log.header.seed);
  report["belief_filter"] = belief_filters(log, e, filter_csv);

  if (e.depth_comparison) {
    const auto* game = scenario->game();
    if (game && game->num_agents() == 2) {
      try {
        const auto d = belief_depth_comparison(log, *game, 0, e.depths, e.holdout);
        report["depth_comparison"] = {{"depths", d.depths},
                                      {"holdout_log_likelihood", d.holdout_log_likelihood},
                                      {"fitted_beta", d.fitted_beta},
                                      {"fitted_rate", d.fitted_rate},
                                      {"train_ticks", d.train_ticks},
                                      {"holdout_ticks", d.holdout_ticks},
                                      {"best_depth", d.best_depth}};
      } catch (const InsufficientDataError& ex) {
        warnings.push_back({{"analysis", "depth_comparison"}, {"reason", ex.what()}});
      }
    } else {
      warnings.push_back({{"analysis", "depth_comparison"}, {"reason", "needs a two-agent tabular game"}});
    }
  }

  if (e.cca) {
    auto cca = shared_subspace(log, e);
    if (cca.contains("skipped")) {
      warnings.push_back({{"analysis", "cca"}, {"reason", cca["skipped"]}});
      if (!o.quiet) err << "warning: cca skipped: " << cca["skipped"].get<std::string>() << '\n';
    } else {
      report["cca"] = cca;
    }
  }

  if (log.snapshots.size() + (log.final_state ? 1 : 0) >= 2)
    report["convergence"] = convergence_report_to_json(convergence_report(log, config.tolerances, config.weights, *scenario));
  report["warnings"] = warnings;

  write_json(dir / "estimate.json", report);
  write_file(dir / "empirical_policy.csv", policy_csv.str());
  write_file(dir / "belief_filter.csv", filter_csv);
  write_meta(dir, "estimate", args, log.header.config_hash, log.header.seed, 1);
  if (!o.quiet) out << "estimate: " << log.ticks.size() << " ticks, " << warnings.size() << " warnings\n  wrote " << dir.string() << '\n';
  return kOk;
}

int cmd_replay(const Options& o, std::ostream& out) {
  const auto log = load_log(o);
  const auto scenario = make_scenario(log.header.scenario);
  ReplayResult r;
  try {
    r = replay(log, *scenario);
  } catch (const ConfigError& e) {
    throw LogFormatError(1, -1, e.what());
  }
  if (r.ok) {
    if (!o.quiet) out << "replay: ok (" << log.ticks.size() << " ticks)\n";
    return kOk;
  }
  out << "replay: diverged at tick " << optional_tick(r.divergence_tick).dump() << ": " << r.detail << '\n';
  return kDataError;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multilevel interactive equilibrium lab", "mie_lab"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  std::uint64_t seed = 0;
  std::size_t jobs = 0;
  app.add_option("--config", o.config, "Experiment config (JSON)");
  auto* seed_opt = app.add_option("--seed", seed, "Root seed, overrides run.seed");
  app.add_option("--out", o.out, "Output directory");
  auto* jobs_opt = app.add_option("--jobs", jobs, "Worker threads for sweeps (default: MIE_LAB_JOBS or all cores)");
  app.add_flag("--quiet", o.quiet, "Suppress the summary on stdout");
  app.add_option("--log", o.log, "Interaction log for analyze, estimate and replay (default: <out>/log.jsonl)");
  auto* simulate = app.add_subcommand("simulate", "Run a rollout and write the log, series and summary");
  auto* analyze = app.add_subcommand("analyze", "Equilibrium and stability reports for a log");
  auto* sweep = app.add_subcommand("sweep", "Parameter or basin-of-attraction grid");
  auto* estimate = app.add_subcommand("estimate", "Estimate policies, beliefs and shared neural subspaces from a log");
  auto* replay_cmd = app.add_subcommand("replay", "Re-simulate a log and check it tick by tick");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }
  if (seed_opt->count() > 0) o.seed = seed;
  if (jobs_opt->count() > 0) o.jobs = jobs;

  try {
    if (simulate->parsed()) return cmd_simulate(o, args, out);
    if (analyze->parsed()) return cmd_analyze(o, args, out);
    if (sweep->parsed()) return cmd_sweep(o, args, out);
    if (estimate->parsed()) return cmd_estimate(o, args, out, err);
    if (replay_cmd->parsed()) return cmd_replay(o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const SweepFailure& e) {
    err << "sweep failed: " << e.what() << '\n';
    return kSweepError;
  } catch (const LogFormatError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const InsufficientDataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kConfigError;
}

}  // namespace mie::lab
