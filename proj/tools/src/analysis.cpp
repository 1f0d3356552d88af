#include <charconv>
#include <cmath>
#include <sstream>

#include "mie/errors.hpp"
#include "mie/scenarios.hpp"
#include "mie_lab/cli.hpp"

namespace mie::lab {

namespace {

std::string number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double max_of(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, x);
  return m;
}

std::size_t scalar_index(const Scenario& scenario, const std::string& name) {
  const auto names = scenario.scalar_names();
  for (std::size_t k = 0; k < names.size(); ++k)
    if (names[k] == name) return k;
  throw ConfigError("sweep.metric", "scenario has no scalar '" + name + "'");
}

std::string default_metric(const std::string& kind) {
  if (kind == "toy_coadapt") return "d";
  if (kind == "bmi_coadapt") return "gain_error";
  throw ConfigError("sweep.metric", "required for scenario kind '" + kind + "'");
}

std::optional<bool> predicted_convergence(const Scenario& scenario) {
  if (const auto* toy = dynamic_cast<const ToyCoAdaptScenario*>(&scenario))
    return toy_contraction_factor(toy->config().alpha_h, toy->config().alpha_m).converges;
  if (const auto* bmi = dynamic_cast<const BmiCoAdaptScenario*>(&scenario))
    return bmi_mean_recursion(bmi->config()).converges;
  return std::nullopt;
}

InteractionLog simulate(const Scenario& scenario, const ExperimentConfig& config) {
  return config.perturbation ? rollout_with_perturbation(scenario, config.run, *config.perturbation)
                             : rollout(scenario, config.run);
}

std::unique_ptr<Scenario> active_scenario(const Scenario& scenario, const ExperimentConfig& config) {
  return config.perturbation ? scenario.perturbed(*config.perturbation) : scenario.clone();
}

struct CellResult {
  std::vector<double> coords;
  StabilityLabel label = StabilityLabel::inconclusive;
  double final_metric = 0.0;
  std::optional<bool> predicted;
  nlohmann::json analysis;
};

SweepOutput parameter_sweep(const ExperimentConfig& config, std::size_t jobs, const std::string& hash) {
  const auto& spec = *config.sweep;
  for (std::size_t k = 0; k < spec.axes.size(); ++k)
    if (!config.scenario.contains(spec.axes[k].key) || !config.scenario.at(spec.axes[k].key).is_number())
      throw ConfigError("sweep.axes[" + std::to_string(k) + "].key",
                        "'" + spec.axes[k].key + "' is not a numeric scenario key");
  const std::string kind = config.scenario.at("kind").get<std::string>();
  const std::string metric = spec.metric.empty() ? default_metric(kind) : spec.metric;
  const std::size_t metric_index = scalar_index(*make_scenario(config.scenario), metric);

  std::size_t count = 1;
  for (const auto& a : spec.axes) count *= a.count;

  const std::function<CellResult(std::size_t)> job = [&](std::size_t cell) {
    CellResult r;
    nlohmann::json scenario_json = config.scenario;
    std::size_t rest = cell;
    r.coords.resize(spec.axes.size());
    for (std::size_t k = spec.axes.size(); k-- > 0;) {
      r.coords[k] = spec.axes[k].value(rest % spec.axes[k].count);
      rest /= spec.axes[k].count;
      scenario_json[spec.axes[k].key] = r.coords[k];
    }
    try {
      const auto scenario = make_scenario(scenario_json);
      r.predicted = predicted_convergence(*scenario);
      try {
        const auto log = simulate(*scenario, config);
        std::vector<double> series;
        series.reserve(log.ticks.size());
        for (const auto& t : log.ticks) series.push_back(std::abs(t.scalars.at(metric_index)));
        r.label = classify_error_series(series, spec.ratio);
        r.final_metric = series.empty() ? 0.0 : series.back();
        if (spec.analyze) {
          const auto active = active_scenario(*scenario, config);
          r.analysis = analyze_log(log, *active, config).equilibrium;
        }
      } catch (const NumericalError&) {
        r.label = StabilityLabel::diverged;
        r.final_metric = std::numeric_limits<double>::infinity();
      }
    } catch (const std::exception& e) {
      throw SweepFailure(cell, e.what());
    }
    return r;
  };
  const auto cells = run_parallel(count, jobs, job);

  const bool has_prediction = !cells.empty() && cells.front().predicted.has_value();
  std::ostringstream csv;
  csv << "# config_hash=" << hash << " seed=" << config.run.seed << '\n';
  for (const auto& a : spec.axes) csv << a.key << ',';
  csv << "label,final_" << metric;
  if (has_prediction) csv << ",predicted";
  if (spec.analyze) csv << ",verdict";
  csv << '\n';

  nlohmann::json rows = nlohmann::json::array();
  std::map<std::string, std::size_t> tally;
  std::size_t agree = 0;
  for (const auto& c : cells) {
    const std::string label(to_string(c.label));
    ++tally[label];
    for (double v : c.coords) csv << number(v) << ',';
    csv << label << ',' << number(c.final_metric);
    nlohmann::json row{{"coords", c.coords}, {"label", label}, {"final_metric", c.final_metric}};
    if (has_prediction) {
      const std::string p = *c.predicted ? "converged" : "diverged";
      csv << ',' << p;
      row["predicted"] = p;
      if (p == label) ++agree;
    }
    if (spec.analyze) {
      csv << ',' << c.analysis.value("verdict", "");
      row["analysis"] = c.analysis;
    }
    csv << '\n';
    rows.push_back(std::move(row));
  }

  nlohmann::json axes = nlohmann::json::array();
  for (const auto& a : spec.axes) axes.push_back({{"key", a.key}, {"lo", a.lo}, {"hi", a.hi}, {"count", a.count}});
  nlohmann::json report{{"config_hash", hash},       {"seed", config.run.seed}, {"kind", "parameters"},
                        {"scenario", config.scenario}, {"metric", metric},      {"ratio", spec.ratio},
                        {"axes", axes},                {"labels", tally},       {"cells", rows}};
  if (has_prediction) report["agreement"] = agree;
  return {report, csv.str()};
}

SweepOutput basin_sweep(const ExperimentConfig& config, std::size_t jobs, const std::string& hash) {
  const auto& spec = *config.sweep;
  const auto scenario = active_scenario(*make_scenario(config.scenario), config);
  auto rng = RngStreams::from_seed(config.run.seed, scenario->num_agents());
  const JointState base = scenario->initial_state(rng.environment);
  const auto names = coordinate_names(base);

  std::vector<GridAxis> axes;
  for (std::size_t k = 0; k < spec.axes.size(); ++k) {
    const auto& a = spec.axes[k];
    const auto it = std::find(names.begin(), names.end(), a.key);
    std::size_t index = 0;
    if (it != names.end()) {
      index = std::size_t(it - names.begin());
    } else {
      const auto r = std::from_chars(a.key.data(), a.key.data() + a.key.size(), index);
      if (r.ec != std::errc() || r.ptr != a.key.data() + a.key.size() || index >= names.size())
        throw ConfigError("sweep.axes[" + std::to_string(k) + "].key",
                          "'" + a.key + "' is neither a coordinate name nor an index below " +
                              std::to_string(names.size()));
    }
    axes.push_back({index, a.lo, a.hi, a.count});
  }

  BasinOptions options;
  options.fixed_point.mean_field = {config.tolerances.samples, config.run.seed, true};
  options.fixed_point.max_iterations = config.analysis.max_iterations;
  options.merge_tolerance = spec.merge_tolerance;
  for (std::size_t k = 0; k < spec.merge_on.size(); ++k) {
    const auto& key = spec.merge_on[k];
    const std::size_t before = options.merge_on.size();
    for (std::size_t c = 0; c < names.size(); ++c)
      if (names[c] == key || (names[c].rfind(key, 0) == 0 && names[c][key.size()] == '['))
        options.merge_on.push_back(c);
    if (options.merge_on.size() == before)
      throw ConfigError("sweep.merge_on[" + std::to_string(k) + "]", "'" + key + "' matches no coordinate");
  }
  options.jobs = jobs;
  BasinMap map;
  try {
    map = basin_map(*scenario, base, axes, options);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw SweepFailure(0, e.what());
  }

  nlohmann::json report = basin_map_to_json(map);
  nlohmann::json coords = nlohmann::json::array();
  for (const auto& a : axes) coords.push_back(names[a.coordinate]);
  report["coordinate_names"] = coords;
  report["config_hash"] = hash;
  report["seed"] = config.run.seed;
  report["kind"] = "basin";
  report["scenario"] = config.scenario;
  std::ostringstream csv;
  csv << "# config_hash=" << hash << " seed=" << config.run.seed << '\n';
  write_basin_csv(map, csv);
  return {report, csv.str()};
}

}  // namespace

Analysis analyze_log(const InteractionLog& log, const Scenario& scenario, const ExperimentConfig& config) {
  if (!log.final_state) throw InsufficientDataError("log has no final state");
  const JointState& final = log.final_state->state;
  const auto& tol = config.tolerances;
  const std::uint64_t seed = log.header.seed;
  Analysis out;

  if (config.analysis.mie) {
    const auto neural = neural_residual(scenario, final, tol.samples, seed);
    const auto cognitive = cognitive_residual(scenario, final, tol.samples, seed);
    const auto gaps = scenario.behavioral_gaps(final);
    auto report = check_mie({neural.value, cognitive.value, gaps}, tol);
    if (log.snapshots.size() >= 2 || (log.snapshots.size() == 1 && log.final_state->t > log.snapshots.front().t)) {
      const auto conv = convergence_report(log, tol, config.weights, scenario);
      if (!conv.distance.empty()) report.distance = conv.distance.back();
    }
    out.equilibrium = equilibrium_report_to_json(report);
    out.equilibrium["neural_standard_error"] = neural.standard_error;
    out.equilibrium["cognitive_standard_error"] = cognitive.standard_error;
    out.equilibrium["max_brgap"] = max_of(gaps);
    out.equilibrium["t"] = log.final_state->t;
    out.equilibrium["config_hash"] = log.header.config_hash;
    out.equilibrium["seed"] = seed;
  }

  if (config.analysis.stability) {
    FixedPointOptions fp;
    fp.mean_field = {tol.samples, seed, true};
    fp.max_iterations = config.analysis.max_iterations;
    const auto fixed = find_fixed_point(scenario, final, fp);
    const nlohmann::json fixed_json{{"converged", fixed.converged},
                                    {"diverged", fixed.diverged},
                                    {"iterations", fixed.iterations},
                                    {"residual", fixed.residual},
                                    {"point", flatten(fixed.candidate)}};
    const std::size_t dim = flatten(fixed.candidate).size();
    if (fixed.diverged) {
      out.stability = {{"skipped", "fixed-point iteration diverged"}};
    } else if (dim == 0) {
      out.stability = {{"skipped", "the multilevel state is empty"}};
    } else if (dim > kMaxJacobianDimension) {
      out.stability = {{"skipped", "state dimension " + std::to_string(dim) + " exceeds " +
                                       std::to_string(kMaxJacobianDimension)}};
    } else {
      const auto jac = mean_field_jacobian(scenario, fixed.candidate, config.analysis.jacobian_step, fp.mean_field);
      out.stability = stability_report_to_json(classify_stability(jac.matrix, tol.neutral_band));
      out.stability["jacobian_error"] = jac.error_estimate;
      out.stability["coordinates"] = coordinate_names(fixed.candidate);
    }
    out.stability["fixed_point"] = fixed_json;
    out.stability["config_hash"] = log.header.config_hash;
    out.stability["seed"] = seed;
  }
  return out;
}

SweepOutput run_sweep(const ExperimentConfig& config, std::size_t jobs) {
  if (!config.sweep) throw ConfigError("sweep", "missing required key");
  const std::string hash = config_hash(config.scenario, config.run, config.perturbation);
  return config.sweep->kind == "basin" ? basin_sweep(config, jobs, hash) : parameter_sweep(config, jobs, hash);
}

}  // namespace mie::lab
