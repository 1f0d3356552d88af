#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mie/errors.hpp"
#include "mie/scenarios.hpp"
#include "mie_lab/cli.hpp"

namespace mie::lab {

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> known, const std::string& prefix) {
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError(prefix + key, "unknown key");
}

template <typename T>
T read(const nlohmann::json& j, const char* key, T fallback, const std::string& prefix) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(prefix + key, "has the wrong type");
  }
}

const nlohmann::json& object_at(const nlohmann::json& j, const char* key, const std::string& prefix) {
  const auto& v = j.at(key);
  if (!v.is_object()) throw ConfigError(prefix + key, "must be an object");
  return v;
}

AnalysisToggles analysis_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"mie", "stability", "max_iterations", "jacobian_step"}, "analysis.");
  AnalysisToggles a;
  a.mie = read(j, "mie", a.mie, "analysis.");
  a.stability = read(j, "stability", a.stability, "analysis.");
  a.max_iterations = read(j, "max_iterations", a.max_iterations, "analysis.");
  a.jacobian_step = read(j, "jacobian_step", a.jacobian_step, "analysis.");
  if (a.max_iterations < 1) throw ConfigError("analysis.max_iterations", "must be at least 1");
  if (!(a.jacobian_step > 0.0)) throw ConfigError("analysis.jacobian_step", "must be positive");
  return a;
}

EstimateOptions estimate_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"smoothing", "cca", "cca_dim", "depth_comparison", "depths", "holdout", "process_noise",
                  "observation_noise"},
                 "estimate.");
  EstimateOptions e;
  e.smoothing = read(j, "smoothing", e.smoothing, "estimate.");
  e.cca = read(j, "cca", e.cca, "estimate.");
  e.cca_dim = read(j, "cca_dim", e.cca_dim, "estimate.");
  e.depth_comparison = read(j, "depth_comparison", e.depth_comparison, "estimate.");
  e.depths = read(j, "depths", e.depths, "estimate.");
  e.holdout = read(j, "holdout", e.holdout, "estimate.");
  e.process_noise = read(j, "process_noise", e.process_noise, "estimate.");
  e.observation_noise = read(j, "observation_noise", e.observation_noise, "estimate.");
  if (!(e.smoothing >= 0.0)) throw ConfigError("estimate.smoothing", "must be nonnegative");
  if (e.cca_dim < 1) throw ConfigError("estimate.cca_dim", "must be at least 1");
  if (!(e.holdout > 0.0 && e.holdout < 1.0)) throw ConfigError("estimate.holdout", "must lie in (0, 1)");
  for (int d : e.depths)
    if (d < 0 || d > 2) throw ConfigError("estimate.depths", "depths must be 0, 1 or 2");
  if (!(e.process_noise > 0.0)) throw ConfigError("estimate.process_noise", "must be positive");
  if (!(e.observation_noise > 0.0)) throw ConfigError("estimate.observation_noise", "must be positive");
  return e;
}

SweepSpec sweep_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"kind", "axes", "metric", "ratio", "analyze", "merge_tolerance", "merge_on"}, "sweep.");
  SweepSpec s;
  s.kind = read(j, "kind", s.kind, "sweep.");
  if (s.kind != "parameters" && s.kind != "basin") throw ConfigError("sweep.kind", "expected 'parameters' or 'basin'");
  s.metric = read(j, "metric", s.metric, "sweep.");
  s.ratio = read(j, "ratio", s.ratio, "sweep.");
  s.analyze = read(j, "analyze", s.analyze, "sweep.");
  s.merge_tolerance = read(j, "merge_tolerance", s.merge_tolerance, "sweep.");
  s.merge_on = read(j, "merge_on", s.merge_on, "sweep.");
  if (!s.merge_on.empty() && s.kind != "basin") throw ConfigError("sweep.merge_on", "only applies to basin sweeps");
  if (!(s.ratio > 0.0 && s.ratio < 1.0)) throw ConfigError("sweep.ratio", "must lie in (0, 1)");
  if (!j.contains("axes") || !j.at("axes").is_array() || j.at("axes").empty())
    throw ConfigError("sweep.axes", "needs a nonempty array");
  std::size_t cells = 1;
  for (std::size_t k = 0; k < j.at("axes").size(); ++k) {
    const auto& a = j.at("axes")[k];
    const std::string prefix = "sweep.axes[" + std::to_string(k) + "].";
    if (!a.is_object()) throw ConfigError(prefix.substr(0, prefix.size() - 1), "must be an object");
    reject_unknown(a, {"key", "lo", "hi", "count"}, prefix);
    SweepAxis axis;
    axis.key = read<std::string>(a, "key", "", prefix);
    if (axis.key.empty()) throw ConfigError(prefix + "key", "missing required key");
    axis.lo = read(a, "lo", axis.lo, prefix);
    axis.hi = read(a, "hi", axis.hi, prefix);
    axis.count = read(a, "count", axis.count, prefix);
    if (axis.count < 1) throw ConfigError(prefix + "count", "must be at least 1");
    if (!std::isfinite(axis.lo) || !std::isfinite(axis.hi)) throw ConfigError(prefix + "lo", "bounds must be finite");
    cells *= axis.count;
    if (cells > 100'000) throw ConfigError("sweep.axes", "grid exceeds 100000 cells");
    s.axes.push_back(axis);
  }
  if (s.kind == "basin" && s.axes.size() > 3) throw ConfigError("sweep.axes", "a basin map varies at most 3 coordinates");
  return s;
}

std::pair<std::size_t, std::size_t> line_and_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t column = 1;
  for (std::size_t k = 0; k + 1 < byte && k < text.size(); ++k) {
    if (text[k] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return {line, column};
}

}  // namespace

ExperimentConfig parse_experiment(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const auto [line, column] = line_and_column(text, e.byte);
    throw ConfigError("", "parse error at line " + std::to_string(line) + ", column " + std::to_string(column) +
                              ": malformed JSON");
  }
  if (!j.is_object()) throw ConfigError("", "top level must be an object");
  reject_unknown(j, {"scenario", "run", "perturbation", "analysis", "tolerances", "weights", "sweep", "estimate", "output"},
                 "");

  ExperimentConfig c;
  if (!j.contains("scenario")) throw ConfigError("scenario", "missing required key");
  c.scenario = object_at(j, "scenario", "");
  if (!c.scenario.contains("kind")) throw ConfigError("scenario.kind", "missing required key");
  // Validates the scenario section and canonicalizes it with every default filled in.
  c.scenario = make_scenario(c.scenario)->to_json();

  if (j.contains("run")) c.run = run_config_from_json(object_at(j, "run", ""));
  c.run.validate();
  if (j.contains("perturbation") && !j.at("perturbation").is_null())
    c.perturbation = perturbation_from_json(j.at("perturbation"));
  if (j.contains("analysis")) c.analysis = analysis_from_json(object_at(j, "analysis", ""));
  if (j.contains("tolerances")) c.tolerances = tolerances_from_json(j.at("tolerances"));
  c.tolerances.validate();
  if (j.contains("weights")) c.weights = weights_from_json(j.at("weights"));
  if (j.contains("sweep")) c.sweep = sweep_from_json(object_at(j, "sweep", ""));
  if (j.contains("estimate")) c.estimate = estimate_from_json(object_at(j, "estimate", ""));
  c.output = read(j, "output", c.output, "");
  return c;
}

ExperimentConfig load_experiment(const std::string& path) {
  if (path.ends_with(".toml")) throw ConfigError("--config", "TOML configs are not supported; use JSON");
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_experiment(buffer.str());
}

}  // namespace mie::lab
