#include "mie/estimation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "mie/agent.hpp"
#include "mie/errors.hpp"

namespace mie {

EmpiricalPolicy empirical_policy(const InteractionLog& log, std::size_t agent, double smoothing) {
  const auto& h = log.header;
  if (h.num_states == 0 || h.actions_per_agent.empty())
    throw UsageError("empirical_policy needs a log of a tabular scenario");
  if (agent >= h.actions_per_agent.size()) throw UsageError("empirical_policy: agent out of range");
  if (!(smoothing >= 0.0)) throw UsageError("empirical_policy: smoothing must be nonnegative");
  EmpiricalPolicy out;
  out.num_states = h.num_states;
  out.num_actions = h.actions_per_agent[agent];
  out.smoothing = smoothing;
  out.counts.assign(out.num_states * out.num_actions, 0);
  for (const auto& tick : log.ticks) ++out.counts[tick.state * out.num_actions + tick.actions[agent]];
  out.distribution = StochasticPolicy::uniform(out.num_states, out.num_actions);
  out.defined.assign(out.num_states, true);
  for (std::size_t s = 0; s < out.num_states; ++s) {
    std::size_t total = 0;
    for (std::size_t a = 0; a < out.num_actions; ++a) total += out.counts[s * out.num_actions + a];
    const double denom = double(total) + smoothing * double(out.num_actions);
    if (denom == 0.0) {
      out.defined[s] = false;
      continue;
    }
    for (std::size_t a = 0; a < out.num_actions; ++a)
      out.distribution(s, a) = (double(out.counts[s * out.num_actions + a]) + smoothing) / denom;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Kalman filter
// ---------------------------------------------------------------------------

void LinearGaussianModel::validate() const {
  const auto n = transition.rows();
  const auto m = observation.rows();
  if (n == 0 || transition.cols() != n) throw UsageError("kalman: transition must be square and non-empty");
  if (observation.cols() != n) throw UsageError("kalman: observation matrix must have one column per state");
  if (process_noise.rows() != n || process_noise.cols() != n) throw UsageError("kalman: Q must be n x n");
  if (observation_noise.rows() != m || observation_noise.cols() != m) throw UsageError("kalman: R must be m x m");
  if (initial_mean.size() != n) throw UsageError("kalman: initial mean has the wrong size");
  if (initial_covariance.rows() != n || initial_covariance.cols() != n)
    throw UsageError("kalman: initial covariance must be n x n");
}

KalmanResult kalman_belief_filter(const LinearGaussianModel& model, const std::vector<Eigen::VectorXd>& observations) {
  model.validate();
  const auto n = model.transition.rows();
  const auto m = model.observation.rows();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  const double log_two_pi = std::log(2.0 * std::numbers::pi);

  KalmanResult out;
  Eigen::VectorXd x = model.initial_mean;
  Eigen::MatrixXd P = model.initial_covariance;
  for (std::size_t t = 0; t < observations.size(); ++t) {
    const auto& y = observations[t];
    if (y.size() != m) throw UsageError("kalman: observation " + std::to_string(t) + " has the wrong size");
    x = model.transition * x;
    P = model.transition * P * model.transition.transpose() + model.process_noise;

    const Eigen::VectorXd innovation = y - model.observation * x;
    Eigen::MatrixXd S = model.observation * P * model.observation.transpose() + model.observation_noise;
    S = 0.5 * (S + S.transpose());
    Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
    const double scale = std::max(1.0, S.cwiseAbs().maxCoeff());
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 1e-12 * scale)
      throw NumericalError("kalman: innovation covariance is singular at step " + std::to_string(t));

    const Eigen::MatrixXd K = ldlt.solve(model.observation * P).transpose();
    x += K * innovation;
    const Eigen::MatrixXd J = I - K * model.observation;
    P = J * P * J.transpose() + K * model.observation_noise * K.transpose();
    P = 0.5 * (P + P.transpose());

    const double log_det = ldlt.vectorD().array().log().sum();
    out.log_likelihood += -0.5 * (innovation.dot(ldlt.solve(innovation)) + log_det + double(m) * log_two_pi);
    if (!x.allFinite() || !P.allFinite()) throw NumericalError("kalman: non-finite state at step " + std::to_string(t));
    out.means.push_back(x);
    out.covariances.push_back(P);
    out.gains.push_back(K);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Divergences
// ---------------------------------------------------------------------------

namespace {

void require_distribution(std::span<const double> p, const char* what) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw UsageError(std::string(what) + " has a negative entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw UsageError(std::string(what) + " does not sum to one");
}

}  // namespace

Divergence kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw UsageError("kl_divergence: distributions must have equal size");
  require_distribution(p, "kl_divergence: p");
  require_distribution(q, "kl_divergence: q");
  Divergence d;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] == 0.0) continue;
    if (q[k] == 0.0) return {std::numeric_limits<double>::infinity(), true};
    d.value += p[k] * std::log(p[k] / q[k]);
  }
  d.value = std::max(d.value, 0.0);
  return d;
}

Divergence belief_policy_divergence(std::span<const double> belief, const EmpiricalPolicy& opponent, std::size_t s) {
  if (s >= opponent.num_states) throw UsageError("belief_policy_divergence: state out of range");
  if (!opponent.defined[s])
    throw InsufficientDataError("state " + std::to_string(s) + " was never visited; use smoothing > 0");
  return kl_divergence(opponent.distribution.row(s), belief);
}

// ---------------------------------------------------------------------------
// Belief depth comparison
// ---------------------------------------------------------------------------

namespace {

struct Move {
  std::size_t state;
  std::size_t own;
  std::size_t opp;
};

constexpr std::array<double, 10> kBetaGrid{0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 15.0, 20.0};
constexpr std::array<double, 8> kRateGrid{0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5};
constexpr double kProbabilityFloor = 1e-12;

void frequency_step(std::vector<double>& f, double& count, std::size_t observed, double rate) {
  const double eta = rate > 0.0 ? rate : 1.0 / (count + 1.0);
  for (std::size_t k = 0; k < f.size(); ++k) f[k] += eta * ((k == observed ? 1.0 : 0.0) - f[k]);
  count += 1.0;
}

// Per-tick log-probabilities of the opponent's moves under a level-k model.
std::vector<double> depth_log_probs(const std::vector<Move>& moves, const TabularMarkovGame& game, std::size_t agent,
                                    int depth, double beta, double rate) {
  const std::size_t opp = 1 - agent;
  const std::size_t own_actions = game.actions_per_agent[agent];
  const std::size_t opp_actions = game.actions_per_agent[opp];
  // Opponent's running estimate of the agent's play, and the opponent's
  // running estimate of its own play (what the agent would believe).
  std::vector<double> about_agent(own_actions, 1.0 / double(own_actions));
  std::vector<double> about_opp(opp_actions, 1.0 / double(opp_actions));
  double count_agent = 0.0;
  double count_opp = 0.0;
  std::vector<double> out;
  out.reserve(moves.size());
  for (const auto& mv : moves) {
    std::vector<double> predicted;
    if (depth == 1) {
      predicted = softmax(expected_stage_payoffs(game, opp, mv.state, about_agent), beta);
    } else {
      const auto agent_play = softmax(expected_stage_payoffs(game, agent, mv.state, about_opp), beta);
      predicted = softmax(expected_stage_payoffs(game, opp, mv.state, agent_play), beta);
    }
    out.push_back(std::log(std::max(predicted[mv.opp], kProbabilityFloor)));
    frequency_step(about_agent, count_agent, mv.own, rate);
    frequency_step(about_opp, count_opp, mv.opp, rate);
  }
  return out;
}

}  // namespace

DepthComparison belief_depth_comparison(const InteractionLog& log, const TabularMarkovGame& game, std::size_t agent,
                                        const std::vector<int>& depths, double holdout_fraction) {
  if (game.num_agents() != 2) throw UsageError("belief depth comparison needs a 2-agent game");
  if (agent > 1) throw UsageError("belief depth comparison: agent must be 0 or 1");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
    throw UsageError("holdout fraction must lie strictly between 0 and 1");
  if (depths.empty()) throw UsageError("belief depth comparison needs at least one depth");
  for (int d : depths)
    if (d < 0 || d > kMaxBeliefDepth) throw UsageError("belief depth " + std::to_string(d) + " is not supported");

  std::vector<Move> moves;
  moves.reserve(log.ticks.size());
  for (const auto& tick : log.ticks) {
    if (tick.actions.size() != 2 || tick.state >= game.num_states || tick.actions[0] >= game.actions_per_agent[0] ||
        tick.actions[1] >= game.actions_per_agent[1])
      throw InconsistencyError("log tick " + std::to_string(tick.t) + " does not fit the game");
    moves.push_back({tick.state, tick.actions[agent], tick.actions[1 - agent]});
  }
  const std::size_t T = moves.size();
  const auto holdout = std::size_t(std::ceil(holdout_fraction * double(T)));
  if (T < 2 || holdout == 0 || holdout >= T)
    throw InsufficientDataError("log has " + std::to_string(T) + " ticks, too few to split into training and holdout");
  const std::size_t train = T - holdout;

  DepthComparison out;
  out.depths = depths;
  out.train_ticks = train;
  out.holdout_ticks = holdout;
  const std::size_t opp_actions = game.actions_per_agent[1 - agent];

  for (int depth : depths) {
    double score = 0.0;
    double best_beta = 0.0;
    double best_rate = 0.0;
    if (depth == 0) {
      std::vector<double> counts(game.num_states * opp_actions, 1.0);
      for (std::size_t k = 0; k < train; ++k) counts[moves[k].state * opp_actions + moves[k].opp] += 1.0;
      for (std::size_t k = train; k < T; ++k) {
        double total = 0.0;
        for (std::size_t b = 0; b < opp_actions; ++b) total += counts[moves[k].state * opp_actions + b];
        score += std::log(counts[moves[k].state * opp_actions + moves[k].opp] / total);
      }
    } else {
      double best_fit = -std::numeric_limits<double>::infinity();
      std::vector<double> best_series;
      for (double beta : kBetaGrid) {
        for (double rate : kRateGrid) {
          auto series = depth_log_probs(moves, game, agent, depth, beta, rate);
          double fit = 0.0;
          for (std::size_t k = 0; k < train; ++k) fit += series[k];
          if (fit > best_fit) {
            best_fit = fit;
            best_beta = beta;
            best_rate = rate;
            best_series = std::move(series);
          }
        }
      }
      for (std::size_t k = train; k < T; ++k) score += best_series[k];
    }
    out.holdout_log_likelihood.push_back(score);
    out.fitted_beta.push_back(best_beta);
    out.fitted_rate.push_back(best_rate);
  }
  const auto best = std::max_element(out.holdout_log_likelihood.begin(), out.holdout_log_likelihood.end());
  out.best_depth = depths[std::size_t(best - out.holdout_log_likelihood.begin())];
  return out;
}

// ---------------------------------------------------------------------------
// Canonical correlation analysis
// ---------------------------------------------------------------------------

namespace {

Eigen::MatrixXd inverse_sqrt(const Eigen::MatrixXd& c, const char* which) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c);
  if (eig.info() != Eigen::Success) throw NumericalError(std::string("cca: eigen decomposition failed for ") + which);
  if (eig.eigenvalues().minCoeff() <= 0.0)
    throw NumericalError(std::string("cca: covariance of ") + which + " is singular; use a positive ridge");
  return eig.operatorInverseSqrt();
}

bool well_conditioned(const Eigen::MatrixXd& c) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c, Eigen::EigenvaluesOnly);
  const double hi = eig.eigenvalues().maxCoeff();
  const double lo = eig.eigenvalues().minCoeff();
  return hi > 0.0 && lo > 1e-10 * hi;
}

}  // namespace

SubspaceResult cca_shared_subspace(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, std::size_t k, double ridge) {
  if (x.rows() != y.rows()) throw UsageError("cca: x and y need the same number of time points");
  if (x.rows() < 2) throw InsufficientDataError("cca needs at least two time points");
  if (k == 0 || k > std::size_t(std::min(x.cols(), y.cols())))
    throw UsageError("cca: k must be between 1 and min(dim x, dim y)");
  const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd yc = y.rowwise() - y.colwise().mean();
  const double denom = double(x.rows() - 1);
  Eigen::MatrixXd cxx = xc.transpose() * xc / denom;
  Eigen::MatrixXd cyy = yc.transpose() * yc / denom;
  const Eigen::MatrixXd cxy = xc.transpose() * yc / denom;

  double rx = ridge;
  double ry = ridge;
  if (ridge < 0.0) {
    rx = well_conditioned(cxx) ? 0.0 : 1e-6 * cxx.trace() / double(cxx.rows());
    ry = well_conditioned(cyy) ? 0.0 : 1e-6 * cyy.trace() / double(cyy.rows());
  }
  cxx.diagonal().array() += rx;
  cyy.diagonal().array() += ry;
  const Eigen::MatrixXd wx = inverse_sqrt(cxx, "x");
  const Eigen::MatrixXd wy = inverse_sqrt(cyy, "y");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(wx * cxy * wy, Eigen::ComputeThinU | Eigen::ComputeThinV);

  SubspaceResult out;
  out.ridge = std::max(rx, ry);
  const auto kk = Eigen::Index(k);
  for (Eigen::Index c = 0; c < kk; ++c) out.correlations.push_back(std::min(svd.singularValues()(c), 1.0));
  out.x_projection = wx * svd.matrixU().leftCols(kk);
  out.y_projection = wy * svd.matrixV().leftCols(kk);
  out.x_shared = xc * out.x_projection;
  out.y_shared = yc * out.y_projection;
  return out;
}

// ---------------------------------------------------------------------------
// Convergence report
// ---------------------------------------------------------------------------

ConvergenceReport convergence_report(const InteractionLog& log, const ToleranceConfig& tol,
                                     const DistanceWeights& weights, const Scenario& scenario) {
  tol.validate();
  if (log.snapshots.empty()) throw InsufficientDataError("log has no snapshots");
  ConvergenceReport r;
  const std::size_t points =
      log.snapshots.size() + (log.final_state && log.final_state->t > log.snapshots.back().t ? 1 : 0);
  if (points > tol.window) {
    r.theta_tick = drift_detector(log, Level::theta, tol.neural, tol.window);
    r.belief_tick = drift_detector(log, Level::belief, tol.cognitive, tol.window);
    r.policy_tick = drift_detector(log, Level::policy, tol.policy, tol.window);
  }

  const auto sizes = level_sizes(log.snapshots.front().state);
  r.tracked = {sizes.theta > 0, sizes.belief > 0, sizes.policy > 0};
  const std::array<std::vector<double>, 3> norms{level_step_norms(log, Level::theta),
                                                 level_step_norms(log, Level::belief),
                                                 level_step_norms(log, Level::policy)};
  const std::array<double, 3> eps{tol.neural, tol.cognitive, tol.policy};

  std::vector<std::uint64_t> ticks;
  for (const auto& s : log.snapshots) ticks.push_back(s.t);
  if (log.final_state && (ticks.empty() || log.final_state->t > ticks.back())) ticks.push_back(log.final_state->t);

  std::size_t run = 0;
  for (std::size_t k = 0; k < norms[0].size(); ++k) {
    bool calm = true;
    for (std::size_t level = 0; level < 3; ++level)
      if (r.tracked[level] && !(norms[level][k] < eps[level])) calm = false;
    run = calm ? run + 1 : 0;
    if (run == tol.window) {
      r.joint_tick = ticks[k + 1 - tol.window];
      break;
    }
  }

  for (std::size_t k = 0; k + 1 < ticks.size(); ++k) {
    r.distance_ticks.push_back(ticks[k]);
    r.distance.push_back(distance_to_equilibrium(log, ticks[k], weights, scenario));
  }
  return r;
}

nlohmann::json convergence_report_to_json(const ConvergenceReport& report) {
  auto tick = [](const std::optional<std::uint64_t>& t) { return t ? nlohmann::json(*t) : nlohmann::json(nullptr); };
  return {{"theta_tick", tick(report.theta_tick)},
          {"belief_tick", tick(report.belief_tick)},
          {"policy_tick", tick(report.policy_tick)},
          {"tracked", {{"theta", report.tracked[0]}, {"belief", report.tracked[1]}, {"policy", report.tracked[2]}}},
          {"joint_tick", tick(report.joint_tick)},
          {"distance_ticks", report.distance_ticks},
          {"distance", report.distance}};
}

}  // namespace mie
