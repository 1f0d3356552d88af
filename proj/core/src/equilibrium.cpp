#include "mie/equilibrium.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <Eigen/Eigenvalues>

#include "mie/errors.hpp"
#include "mie/mdp.hpp"

namespace mie {

void ToleranceConfig::validate() const {
  auto positive = [](double v, const char* key) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string("tolerances.") + key, "must be positive");
  };
  positive(neural, "neural");
  positive(cognitive, "cognitive");
  positive(policy, "policy");
  positive(brgap, "brgap");
  if (window < 1) throw ConfigError("tolerances.window", "must be at least 1");
  if (samples < 10) throw ConfigError("tolerances.samples", "at least 10 Monte Carlo samples are required");
  if (!(neutral_band >= 0.0)) throw ConfigError("tolerances.neutral_band", "must be nonnegative");
}

nlohmann::json tolerances_to_json(const ToleranceConfig& tol) {
  return {{"neural", tol.neural},   {"cognitive", tol.cognitive}, {"policy", tol.policy},
          {"brgap", tol.brgap},     {"window", tol.window},       {"samples", tol.samples},
          {"neutral_band", tol.neutral_band}};
}

ToleranceConfig tolerances_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("tolerances", "must be an object");
  ToleranceConfig tol;
  auto read = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      field = j.at(key).get<std::decay_t<decltype(field)>>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string("tolerances.") + key, "has the wrong type");
    }
  };
  read("neural", tol.neural);
  read("cognitive", tol.cognitive);
  read("policy", tol.policy);
  read("brgap", tol.brgap);
  read("window", tol.window);
  read("samples", tol.samples);
  read("neutral_band", tol.neutral_band);
  for (const auto& [key, value] : j.items()) {
    static const std::vector<std::string> known{"neural", "cognitive", "policy", "brgap",
                                                "window", "samples",   "neutral_band"};
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("tolerances." + key, "unknown key");
  }
  tol.validate();
  return tol;
}

// ---------------------------------------------------------------------------
// Mean field
// ---------------------------------------------------------------------------

namespace {

// Independent draws of Phi(state); sample m uses substream m of `seed`.
std::vector<JointState> sample_successors(const Scenario& scenario, const JointState& state, std::size_t samples,
                                          std::uint64_t seed) {
  std::vector<JointState> out;
  out.reserve(samples);
  for (std::size_t m = 0; m < samples; ++m) {
    JointState copy = state;
    RngStreams rng = RngStreams::from_seed(derive_seed(seed, m), scenario.num_agents());
    scenario.advance(copy, 0, rng, OperatorSchedule{});
    out.push_back(std::move(copy));
  }
  return out;
}

std::vector<JointState> successors(const Scenario& scenario, const JointState& state, std::size_t samples,
                                   std::uint64_t seed, bool exact_when_available) {
  if (exact_when_available)
    if (auto exact = scenario.expected_advance(state)) return {std::move(*exact)};
  if (samples == 0) throw UsageError("mean field needs at least one sample");
  return sample_successors(scenario, state, samples, seed);
}

void belief_values(const BeliefState& b, std::vector<double>& out) {
  const auto v = b.values();
  out.insert(out.end(), v.begin(), v.end());
  for (const auto& n : b.nested) belief_values(n, out);
}

// Per-agent residual of one level: norm of the mean displacement and the
// standard error of that mean displacement vector.
template <typename Extract, typename Norm>
ResidualEstimate level_residual(const JointState& state, const std::vector<JointState>& next, Extract extract,
                                Norm norm) {
  ResidualEstimate est;
  for (std::size_t i = 0; i < state.agents.size(); ++i) {
    const std::vector<double> base = extract(state.agents[i]);
    std::vector<double> mean(base.size(), 0.0);
    std::vector<double> sq(base.size(), 0.0);
    for (const auto& s : next) {
      const auto v = extract(s.agents[i]);
      for (std::size_t k = 0; k < base.size(); ++k) {
        const double d = v[k] - base[k];
        mean[k] += d;
        sq[k] += d * d;
      }
    }
    const double m = double(next.size());
    double se_sq = 0.0;
    for (std::size_t k = 0; k < base.size(); ++k) {
      mean[k] /= m;
      if (next.size() > 1) {
        const double var = std::max(0.0, (sq[k] - m * mean[k] * mean[k]) / (m - 1.0));
        se_sq += var / m;
      }
    }
    est.value.push_back(norm(mean));
    est.standard_error.push_back(std::sqrt(se_sq));
  }
  return est;
}

double l2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double l1(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s;
}

double l2_diff(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

}  // namespace

JointState mean_field_step(const Scenario& scenario, const JointState& state, const MeanFieldOptions& options) {
  if (options.exact_when_available)
    if (auto exact = scenario.expected_advance(state)) return std::move(*exact);
  if (options.samples == 0) throw UsageError("mean field needs at least one sample");
  const auto draws = sample_successors(scenario, state, options.samples, options.seed);
  std::vector<double> mean = flatten(draws.front());
  for (std::size_t m = 1; m < draws.size(); ++m) {
    const auto x = flatten(draws[m]);
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += x[k];
  }
  for (double& v : mean) v /= double(draws.size());
  JointState out = unflatten(state, mean);
  out.env_state = state.env_state;
  scenario.resync(out);
  return out;
}

std::vector<double> mean_field_map(const Scenario& scenario, const JointState& like, std::span<const double> x,
                                   const MeanFieldOptions& options) {
  JointState state = unflatten(like, x);
  scenario.resync(state);
  return flatten(mean_field_step(scenario, state, options));
}

ResidualEstimate neural_residual(const Scenario& scenario, const JointState& state, std::size_t samples,
                                 std::uint64_t seed, bool exact_when_available) {
  const auto next = successors(scenario, state, samples, seed, exact_when_available);
  return level_residual(
      state, next, [](const MultilevelAgentState& a) { return a.theta.values; }, l2);
}

ResidualEstimate cognitive_residual(const Scenario& scenario, const JointState& state, std::size_t samples,
                                    std::uint64_t seed, bool exact_when_available) {
  const auto next = successors(scenario, state, samples, seed, exact_when_available);
  return level_residual(
      state, next,
      [](const MultilevelAgentState& a) {
        std::vector<double> v;
        belief_values(a.belief, v);
        return v;
      },
      l1);
}

double brgap(const TabularMarkovGame& game, std::span<const StochasticPolicy> joint_policy, std::size_t agent) {
  return brgap(game, joint_policy, agent, game.discount);
}

double brgap(const TabularMarkovGame& game, std::span<const StochasticPolicy> joint_policy, std::size_t agent,
             double discount) {
  if (!(discount >= 0.0 && discount < 1.0)) throw UsageError("brgap: discount outside [0, 1)");
  Mdp mdp = single_agent_mdp(game, agent, joint_policy);
  mdp.discount = discount;
  const auto& own = joint_policy[agent];
  if (own.num_states != game.num_states || own.num_actions != game.actions_per_agent[agent])
    throw UsageError("brgap: policy of the evaluated agent has the wrong shape");
  require_distribution_rows(own, 1e-9, "policy of agent " + std::to_string(agent));
  const auto best = solve_optimal(mdp);
  const auto current = evaluate_policy(mdp, own);
  const double gap = initial_value(mdp, best.values) - initial_value(mdp, current);
  const double scale = std::max(1.0, std::abs(initial_value(mdp, best.values)));
  if (gap < -1e-9 * scale) throw NumericalError("brgap: policy outperforms the computed optimum");
  return std::max(gap, 0.0);
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::full_mie:
      return "full_mie";
    case Verdict::marginal_mie:
      return "marginal_mie";
    case Verdict::none:
      return "none";
  }
  return "none";
}

std::string EquilibriumReport::satisfied() const {
  static constexpr std::array<std::string_view, 3> names{"i", "ii", "iii"};
  std::string out;
  for (std::size_t k = 0; k < 3; ++k) {
    if (!conditions[k]) continue;
    if (!out.empty()) out += "+";
    out += names[k];
  }
  return out.empty() ? "none" : out;
}

EquilibriumReport check_mie(const MieInputs& inputs, const ToleranceConfig& tol) {
  tol.validate();
  auto all_within = [](const std::vector<double>& values, double eps) {
    return std::all_of(values.begin(), values.end(), [eps](double v) { return v <= eps; });
  };
  EquilibriumReport r;
  r.neural_residual = inputs.neural;
  r.cognitive_residual = inputs.cognitive;
  r.brgap = inputs.brgap;
  r.tolerances = tol;
  r.conditions = {all_within(inputs.neural, tol.neural), all_within(inputs.cognitive, tol.cognitive),
                  all_within(inputs.brgap, tol.brgap)};
  const auto count = std::count(r.conditions.begin(), r.conditions.end(), true);
  r.verdict = count == 3 ? Verdict::full_mie : count == 2 ? Verdict::marginal_mie : Verdict::none;
  return r;
}

nlohmann::json equilibrium_report_to_json(const EquilibriumReport& report) {
  nlohmann::json j{{"neural_residual", report.neural_residual},
                   {"cognitive_residual", report.cognitive_residual},
                   {"brgap", report.brgap},
                   {"conditions",
                    {{"neural_stationarity", report.conditions[0]},
                     {"cognitive_consistency", report.conditions[1]},
                     {"behavioral_best_response", report.conditions[2]}}},
                   {"satisfied", report.satisfied()},
                   {"verdict", std::string(to_string(report.verdict))},
                   {"tolerances", tolerances_to_json(report.tolerances)}};
  j["distance"] = report.distance ? nlohmann::json(*report.distance) : nlohmann::json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// Distance and drift
// ---------------------------------------------------------------------------

nlohmann::json weights_to_json(const DistanceWeights& w) {
  return {{"theta", w.theta}, {"belief", w.belief}, {"policy", w.policy}, {"brgap", w.brgap}};
}

DistanceWeights weights_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("weights", "must be an object");
  DistanceWeights w;
  for (const auto& [key, value] : j.items()) {
    if (!value.is_number()) throw ConfigError("weights." + key, "must be a number");
    const double v = value.get<double>();
    if (!(v >= 0.0)) throw ConfigError("weights." + key, "must be nonnegative");
    if (key == "theta")
      w.theta = v;
    else if (key == "belief")
      w.belief = v;
    else if (key == "policy")
      w.policy = v;
    else if (key == "brgap")
      w.brgap = v;
    else
      throw ConfigError("weights." + key, "unknown key");
  }
  return w;
}

namespace {

// Snapshots in time order, with the final state appended when it is later
// than the last periodic snapshot.
std::vector<const Snapshot*> snapshot_sequence(const InteractionLog& log) {
  std::vector<const Snapshot*> seq;
  for (const auto& s : log.snapshots) seq.push_back(&s);
  if (log.final_state && (seq.empty() || log.final_state->t > seq.back()->t)) seq.push_back(&*log.final_state);
  return seq;
}

}  // namespace

double distance_to_equilibrium(const InteractionLog& log, std::uint64_t t, const DistanceWeights& weights,
                               const Scenario& scenario) {
  const auto seq = snapshot_sequence(log);
  for (std::size_t k = 0; k < seq.size(); ++k) {
    if (seq[k]->t != t) continue;
    if (k + 1 == seq.size())
      throw InsufficientDataError("no snapshot after tick " + std::to_string(t) + " to measure drift against");
    const auto drift = level_drift(seq[k]->state, seq[k + 1]->state);
    double gap = 0.0;
    for (double g : scenario.behavioral_gaps(seq[k]->state)) gap += g;
    return weights.theta * drift.theta + weights.belief * drift.belief + weights.policy * drift.policy +
           weights.brgap * gap;
  }
  throw InsufficientDataError("no snapshot at tick " + std::to_string(t));
}

std::string_view to_string(Level level) {
  switch (level) {
    case Level::theta:
      return "theta";
    case Level::belief:
      return "belief";
    case Level::policy:
      return "policy";
  }
  return "theta";
}

std::vector<double> level_step_norms(const InteractionLog& log, Level level) {
  const auto seq = snapshot_sequence(log);
  std::vector<double> out;
  for (std::size_t k = 0; k + 1 < seq.size(); ++k) {
    const auto d = level_drift(seq[k]->state, seq[k + 1]->state);
    out.push_back(level == Level::theta ? d.theta : level == Level::belief ? d.belief : d.policy);
  }
  return out;
}

std::optional<std::uint64_t> drift_detector(const InteractionLog& log, Level level, double tol, std::size_t window) {
  if (window < 1) throw UsageError("drift_detector: window must be at least 1");
  const auto seq = snapshot_sequence(log);
  if (seq.size() < window + 1)
    throw InsufficientDataError("drift detection over a window of " + std::to_string(window) + " needs " +
                                std::to_string(window + 1) + " snapshots, log has " + std::to_string(seq.size()));
  const auto norms = level_step_norms(log, level);
  std::size_t run = 0;
  for (std::size_t k = 0; k < norms.size(); ++k) {
    run = norms[k] < tol ? run + 1 : 0;
    if (run == window) return seq[k + 1 - window]->t;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Fixed points and stability
// ---------------------------------------------------------------------------

FixedPointResult find_fixed_point(const Scenario& scenario, const JointState& start, const FixedPointOptions& options) {
  if (!(options.damping > 0.0 && options.damping <= 1.0)) throw UsageError("fixed point damping must be in (0, 1]");
  FixedPointResult result;
  std::vector<double> x = flatten(start);
  JointState like = start;
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    const auto y = mean_field_map(scenario, like, x, options.mean_field);
    double norm_sq = 0.0;
    double size_sq = 0.0;
    std::vector<double> next(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
      next[k] = x[k] + options.damping * (y[k] - x[k]);
      norm_sq += (next[k] - x[k]) * (next[k] - x[k]);
      size_sq += next[k] * next[k];
    }
    const double step = std::sqrt(norm_sq);
    result.step_norms.push_back(step);
    if (!std::isfinite(step) || std::sqrt(size_sq) > options.divergence_threshold) {
      result.diverged = true;
      result.iterations = it + 1;
      x = std::move(next);
      break;
    }
    if (step < options.step_tolerance) {
      result.converged = true;
      result.iterations = it;
      break;
    }
    x = std::move(next);
    result.iterations = it + 1;
  }
  result.candidate = unflatten(like, x);
  scenario.resync(result.candidate);
  if (!result.diverged) {
    const auto y = mean_field_map(scenario, like, x, options.mean_field);
    result.residual = l2_diff(y, x);
  } else {
    result.residual = std::numeric_limits<double>::infinity();
  }
  return result;
}

JacobianEstimate mean_field_jacobian(const Scenario& scenario, const JointState& at, double h,
                                     const MeanFieldOptions& options) {
  if (!(h > 0.0)) throw UsageError("jacobian step must be positive");
  const std::vector<double> x = flatten(at);
  const std::size_t n = x.size();
  if (n == 0) throw UsageError("jacobian of an empty state");
  if (n > kMaxJacobianDimension)
    throw UsageError("jacobian dimension " + std::to_string(n) + " exceeds " + std::to_string(kMaxJacobianDimension));
  auto column = [&](std::size_t k, double step) {
    std::vector<double> plus = x;
    std::vector<double> minus = x;
    plus[k] += step;
    minus[k] -= step;
    const auto fp = mean_field_map(scenario, at, plus, options);
    const auto fm = mean_field_map(scenario, at, minus, options);
    Eigen::VectorXd col(Eigen::Index(fp.size()));
    for (std::size_t r = 0; r < fp.size(); ++r) col(Eigen::Index(r)) = (fp[r] - fm[r]) / (2.0 * step);
    return col;
  };
  JacobianEstimate est;
  est.matrix.resize(Eigen::Index(n), Eigen::Index(n));
  for (std::size_t k = 0; k < n; ++k) {
    const auto ch = column(k, h);
    const auto c2h = column(k, 2.0 * h);
    est.matrix.col(Eigen::Index(k)) = ch;
    est.error_estimate = std::max(est.error_estimate, (ch - c2h).cwiseAbs().maxCoeff() / 3.0);
  }
  return est;
}

std::string_view to_string(StabilityClass c) {
  switch (c) {
    case StabilityClass::stable:
      return "stable";
    case StabilityClass::unstable:
      return "unstable";
    case StabilityClass::neutral:
      return "neutral";
    case StabilityClass::inconclusive:
      return "inconclusive";
  }
  return "inconclusive";
}

StabilityReport classify_stability(const Eigen::MatrixXd& jacobian, double neutral_band) {
  StabilityReport report;
  report.jacobian = jacobian;
  if (jacobian.rows() == 0 || jacobian.rows() != jacobian.cols() || !jacobian.allFinite()) return report;
  Eigen::EigenSolver<Eigen::MatrixXd> solver(jacobian, false);
  if (solver.info() != Eigen::Success) return report;
  bool unstable = false;
  for (Eigen::Index k = 0; k < solver.eigenvalues().size(); ++k) {
    const std::complex<double> lambda = solver.eigenvalues()(k);
    report.eigenvalues.push_back(lambda);
    const double mod = std::abs(lambda);
    if (mod >= 1.0 - neutral_band && mod <= 1.0 + neutral_band) {
      ++report.neutral_count;
      continue;
    }
    report.spectral_radius = std::max(report.spectral_radius, mod);
    if (mod > 1.0 + neutral_band) unstable = true;
  }
  std::sort(report.eigenvalues.begin(), report.eigenvalues.end(),
            [](const auto& a, const auto& b) { return std::abs(a) > std::abs(b); });
  report.classification = unstable                   ? StabilityClass::unstable
                          : report.neutral_count > 0 ? StabilityClass::neutral
                                                     : StabilityClass::stable;
  return report;
}

nlohmann::json stability_report_to_json(const StabilityReport& report) {
  nlohmann::json eig = nlohmann::json::array();
  for (const auto& l : report.eigenvalues) eig.push_back({{"re", l.real()}, {"im", l.imag()}, {"abs", std::abs(l)}});
  nlohmann::json jac = nlohmann::json::array();
  for (Eigen::Index r = 0; r < report.jacobian.rows(); ++r) {
    std::vector<double> row(std::size_t(report.jacobian.cols()));
    for (Eigen::Index c = 0; c < report.jacobian.cols(); ++c) row[std::size_t(c)] = report.jacobian(r, c);
    jac.push_back(row);
  }
  return {{"point", report.point},
          {"jacobian", jac},
          {"eigenvalues", eig},
          {"spectral_radius", report.spectral_radius},
          {"neutral_count", report.neutral_count},
          {"classification", std::string(to_string(report.classification))}};
}

// ---------------------------------------------------------------------------
// Basins
// ---------------------------------------------------------------------------

BasinMap basin_map(const Scenario& scenario, const JointState& base, const std::vector<GridAxis>& axes,
                   const BasinOptions& options) {
  if (axes.empty() || axes.size() > 3) throw UsageError("basin map needs one to three axes");
  const std::vector<double> x0 = flatten(base);
  std::size_t cells = 1;
  for (const auto& a : axes) {
    if (a.coordinate >= x0.size())
      throw UsageError("basin axis coordinate " + std::to_string(a.coordinate) + " outside the state");
    if (a.count < 1) throw UsageError("basin axis needs at least one point");
    cells *= a.count;
  }

  auto coords_of = [&](std::size_t cell) {
    std::vector<double> coords(axes.size());
    for (std::size_t k = axes.size(); k-- > 0;) {
      coords[k] = axes[k].value(cell % axes[k].count);
      cell /= axes[k].count;
    }
    return coords;
  };

  const std::function<FixedPointResult(std::size_t)> job = [&](std::size_t cell) {
    std::vector<double> x = x0;
    const auto coords = coords_of(cell);
    for (std::size_t k = 0; k < axes.size(); ++k) x[axes[k].coordinate] = coords[k];
    JointState start = unflatten(base, x);
    scenario.resync(start);
    return find_fixed_point(scenario, start, options.fixed_point);
  };
  const auto results = run_parallel<FixedPointResult>(cells, options.jobs, job);
  std::vector<std::size_t> merged = options.merge_on;
  for (std::size_t k : merged)
    if (k >= x0.size()) throw UsageError("basin merge coordinate " + std::to_string(k) + " outside the state");
  if (merged.empty())
    for (std::size_t k = 0; k < x0.size(); ++k) merged.push_back(k);

  BasinMap map;
  map.axes = axes;
  for (std::size_t c = 0; c < cells; ++c) {
    BasinCell cell;
    cell.coords = coords_of(c);
    const auto& r = results[c];
    cell.convergence_time = r.iterations;
    if (r.diverged) {
      cell.label = kLabelDiverged;
    } else if (!r.converged) {
      cell.label = kLabelNotConverged;
    } else {
      cell.endpoint = flatten(r.candidate);
      cell.label = -3;
      for (std::size_t a = 0; a < map.attractors.size(); ++a) {
        double dist = 0.0;
        for (std::size_t k : merged)
          dist = std::max(dist, std::abs(cell.endpoint[k] - map.attractors[a][k]));
        if (dist <= options.merge_tolerance) {
          cell.label = int(a);
          break;
        }
      }
      if (cell.label == -3) {
        cell.label = int(map.attractors.size());
        map.attractors.push_back(cell.endpoint);
      }
    }
    map.cells.push_back(std::move(cell));
  }
  return map;
}

nlohmann::json basin_map_to_json(const BasinMap& map) {
  nlohmann::json axes = nlohmann::json::array();
  for (const auto& a : map.axes)
    axes.push_back({{"coordinate", a.coordinate}, {"lo", a.lo}, {"hi", a.hi}, {"count", a.count}});
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : map.cells)
    cells.push_back({{"coords", c.coords}, {"label", c.label}, {"convergence_time", c.convergence_time}});
  return {{"axes", axes}, {"cells", cells}, {"attractors", map.attractors}};
}

void write_basin_csv(const BasinMap& map, std::ostream& out) {
  for (const auto& a : map.axes) out << "coord_" << a.coordinate << ',';
  out << "label,convergence_time\n";
  out.precision(17);
  for (const auto& c : map.cells) {
    for (double v : c.coords) out << v << ',';
    out << c.label << ',' << c.convergence_time << '\n';
  }
}

}  // namespace mie
