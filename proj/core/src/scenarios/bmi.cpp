#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "builders.hpp"
#include "mie/errors.hpp"
#include "mie/scenarios.hpp"

namespace mie {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixView = Eigen::Map<RowMatrix>;
using ConstMatrixView = Eigen::Map<const RowMatrix>;

// Box-Muller on the platform-independent uniform draw, so runs reproduce
// bit for bit across standard libraries.
double standard_normal(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<double> identity_like(std::size_t rows, std::size_t cols, double scale) {
  std::vector<double> out(rows * cols, 0.0);
  for (std::size_t k = 0; k < std::min(rows, cols); ++k) out[k * cols + k] = scale;
  return out;
}

std::string_view target_name(TargetDistribution t) { return t == TargetDistribution::rademacher ? "rademacher" : "gaussian"; }

}  // namespace

void BmiConfig::validate() const {
  if (neural_dim < 1) throw ConfigError("scenario.neural_dim", "must be at least 1");
  if (command_dim < 1) throw ConfigError("scenario.command_dim", "must be at least 1");
  if (!std::isfinite(alpha_h) || alpha_h < 0.0) throw ConfigError("scenario.alpha_h", "must be finite and >= 0");
  if (!std::isfinite(alpha_m) || alpha_m < 0.0) throw ConfigError("scenario.alpha_m", "must be finite and >= 0");
  if (!std::isfinite(noise) || noise < 0.0) throw ConfigError("scenario.noise", "must be finite and >= 0");
  if (!std::isfinite(target_scale) || target_scale <= 0.0)
    throw ConfigError("scenario.target_scale", "must be positive");
  if (!encoder_init.empty() && encoder_init.size() != neural_dim * command_dim)
    throw ConfigError("scenario.encoder_init", "needs neural_dim * command_dim entries");
  if (!decoder_init.empty() && decoder_init.size() != neural_dim * command_dim)
    throw ConfigError("scenario.decoder_init", "needs command_dim * neural_dim entries");
  if (!(belief_rate >= 0.0 && belief_rate <= 1.0)) throw ConfigError("scenario.belief_rate", "must lie in [0, 1]");
}

bool BmiRecursion::stable(double alpha_h, double alpha_m) const { return std::abs(factor(alpha_h, alpha_m)) < 1.0; }

BmiRecursion bmi_recursion(const BmiConfig& config, const std::vector<double>& encoder,
                           const std::vector<double>& decoder) {
  config.validate();
  if (encoder.size() != config.neural_dim * config.command_dim || decoder.size() != encoder.size())
    throw UsageError("bmi_recursion: mapping sizes do not match the configuration");
  double e_sq = 0.0;
  double d_sq = 0.0;
  for (double v : encoder) e_sq += v * v;
  for (double v : decoder) d_sq += v * v;
  const double s2 = config.target_scale * config.target_scale;
  const double per_command = 1.0 / double(config.command_dim);
  return {s2 * d_sq * per_command, s2 * e_sq * per_command + config.noise * config.noise};
}

BmiRecursion bmi_recursion(const BmiConfig& config) {
  return bmi_recursion(config,
                       config.encoder_init.empty() ? identity_like(config.neural_dim, config.command_dim, 1.0)
                                                   : config.encoder_init,
                       config.decoder_init.empty() ? identity_like(config.command_dim, config.neural_dim, 0.5)
                                                   : config.decoder_init);
}

BmiPrediction bmi_mean_recursion(const BmiConfig& config, std::size_t max_steps, double tolerance) {
  config.validate();
  const auto n = Eigen::Index(config.neural_dim);
  const auto m = Eigen::Index(config.command_dim);
  const auto e0 = config.encoder_init.empty() ? identity_like(n, m, 1.0) : config.encoder_init;
  const auto d0 = config.decoder_init.empty() ? identity_like(m, n, 0.5) : config.decoder_init;
  Eigen::MatrixXd E = ConstMatrixView(e0.data(), n, m);
  Eigen::MatrixXd D = ConstMatrixView(d0.data(), m, n);
  Eigen::MatrixXd D_hat = D;
  const double s2 = config.target_scale * config.target_scale;
  const double v2 = config.noise * config.noise;
  const Eigen::MatrixXd I_m = Eigen::MatrixXd::Identity(m, m);
  const Eigen::MatrixXd I_n = Eigen::MatrixXd::Identity(n, n);

  BmiPrediction out;
  for (std::size_t step = 0;; ++step) {
    out.steps = step;
    out.gain_error = (D * E - I_m).norm();
    if (!std::isfinite(out.gain_error) || out.gain_error > 1e6) {
      out.diverges = true;
      break;
    }
    if (out.gain_error < tolerance) {
      out.converges = true;
      break;
    }
    if (step == max_steps) break;
    E -= config.alpha_h * s2 * D_hat.transpose() * (D * E - I_m);
    D -= config.alpha_m * (D * (s2 * E * E.transpose() + v2 * I_n) - s2 * E.transpose());
    D_hat += config.belief_rate * (D - D_hat);
  }
  out.encoder.resize(std::size_t(n * m));
  out.decoder.resize(std::size_t(n * m));
  MatrixView(out.encoder.data(), n, m) = E;
  MatrixView(out.decoder.data(), m, n) = D;
  return out;
}

BmiCoAdaptScenario::BmiCoAdaptScenario(BmiConfig config) : config_(std::move(config)) { config_.validate(); }

nlohmann::json BmiCoAdaptScenario::to_json() const {
  return {{"kind", "bmi_coadapt"},
          {"neural_dim", config_.neural_dim},
          {"command_dim", config_.command_dim},
          {"alpha_h", config_.alpha_h},
          {"alpha_m", config_.alpha_m},
          {"noise", config_.noise},
          {"target_scale", config_.target_scale},
          {"target", std::string(target_name(config_.target))},
          {"encoder_init", config_.encoder_init},
          {"decoder_init", config_.decoder_init},
          {"belief_rate", config_.belief_rate}};
}

std::unique_ptr<Scenario> BmiCoAdaptScenario::clone() const { return std::make_unique<BmiCoAdaptScenario>(*this); }

JointState BmiCoAdaptScenario::initial_state(Rng&) const {
  const std::size_t n = config_.neural_dim;
  const std::size_t m = config_.command_dim;
  const auto e = config_.encoder_init.empty() ? identity_like(n, m, 1.0) : config_.encoder_init;
  const auto d = config_.decoder_init.empty() ? identity_like(m, n, 0.5) : config_.decoder_init;
  JointState s;
  s.agents.resize(2);
  s.agents[0].theta = {e, config_.alpha_h};
  s.agents[0].belief = BeliefState::gaussian(d);
  s.agents[1].theta = {d, config_.alpha_m};
  s.agents[1].belief = BeliefState::gaussian(e);
  return s;
}

TickRecord BmiCoAdaptScenario::advance(JointState& state, std::uint64_t t, RngStreams& rng,
                                       const OperatorSchedule& schedule) const {
  const auto n = Eigen::Index(config_.neural_dim);
  const auto m = Eigen::Index(config_.command_dim);
  MatrixView E(state.agents[0].theta.values.data(), n, m);
  MatrixView D_hat(state.agents[0].belief.mean.data(), m, n);
  MatrixView D(state.agents[1].theta.values.data(), m, n);
  MatrixView E_hat(state.agents[1].belief.mean.data(), n, m);

  Eigen::VectorXd c(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    c(k) = config_.target == TargetDistribution::rademacher
               ? (uniform01(rng.environment) < 0.5 ? -1.0 : 1.0) * config_.target_scale
               : config_.target_scale * standard_normal(rng.environment);
  }
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  if (config_.noise > 0.0)
    for (Eigen::Index k = 0; k < n; ++k) v(k) = config_.noise * standard_normal(rng.environment);

  const Eigen::VectorXd activity = E * c + v;
  const Eigen::VectorXd error = D * activity - c;
  const double tracking = error.squaredNorm();

  TickRecord rec;
  rec.t = t;
  rec.actions = {0, 0};
  rec.rewards = {-0.5 * tracking, -0.5 * tracking};
  rec.scalars = {tracking, gain_error(state)};
  rec.observations.resize(2);
  if (!masked_[0]) rec.observations[0].signal = tracking;
  if (!masked_[1]) rec.observations[1].signal = tracking;

  if (!masked_[0] && schedule.neural_due(t)) E -= config_.alpha_h * (D_hat.transpose() * error) * c.transpose();
  if (!masked_[1] && schedule.neural_due(t)) {
    const Eigen::VectorXd updated = E * c + v;
    D -= config_.alpha_m * (D * updated - c) * updated.transpose();
  }
  if (schedule.belief_due(t)) {
    if (!masked_[0]) D_hat += config_.belief_rate * (D - D_hat);
    if (!masked_[1]) E_hat += config_.belief_rate * (E - E_hat);
  }
  return rec;
}

double BmiCoAdaptScenario::gain_error(const JointState& state) const {
  const auto n = Eigen::Index(config_.neural_dim);
  const auto m = Eigen::Index(config_.command_dim);
  ConstMatrixView E(state.agents[0].theta.values.data(), n, m);
  ConstMatrixView D(state.agents[1].theta.values.data(), m, n);
  return (D * E - Eigen::MatrixXd::Identity(m, m)).norm();
}

std::vector<double> BmiCoAdaptScenario::behavioral_gaps(const JointState& state) const {
  const auto n = Eigen::Index(config_.neural_dim);
  const auto m = Eigen::Index(config_.command_dim);
  const Eigen::MatrixXd E = ConstMatrixView(state.agents[0].theta.values.data(), n, m);
  const Eigen::MatrixXd D = ConstMatrixView(state.agents[1].theta.values.data(), m, n);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(m, m);
  const double s2 = config_.target_scale * config_.target_scale;
  const double v2 = config_.noise * config_.noise;

  // Brain: the best encoder for D reaches the projection D D^+.
  const Eigen::MatrixXd D_pinv = D.completeOrthogonalDecomposition().pseudoInverse();
  const double brain = s2 * ((D * E - I).squaredNorm() - (D * D_pinv - I).squaredNorm());

  // Machine: against the Wiener decoder for E.
  auto cost = [&](const Eigen::MatrixXd& decoder) { return s2 * (decoder * E - I).squaredNorm() + v2 * decoder.squaredNorm(); };
  const Eigen::MatrixXd activity_cov = s2 * E * E.transpose() + v2 * Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd wiener = s2 * E.transpose() * activity_cov.completeOrthogonalDecomposition().pseudoInverse();
  const double machine = cost(D) - cost(wiener);
  return {std::max(brain, 0.0), std::max(machine, 0.0)};
}

std::vector<PerturbationTarget> BmiCoAdaptScenario::perturbation_targets() const {
  return {PerturbationTarget::neural_params, PerturbationTarget::belief, PerturbationTarget::decoder_mapping,
          PerturbationTarget::observation_mask};
}

std::unique_ptr<Scenario> BmiCoAdaptScenario::perturbed(const PerturbationSpec& p) const {
  if (p.agent >= 2) throw UsageError("perturbation agent out of range");
  if (p.target == PerturbationTarget::observation_mask) {
    auto copy = std::make_unique<BmiCoAdaptScenario>(*this);
    if (p.magnitude != 0.0) copy->masked_[p.agent] = true;
    return copy;
  }
  return Scenario::perturbed(p);
}

void BmiCoAdaptScenario::perturb_state(JointState& state, const PerturbationSpec& p) const {
  if (p.target == PerturbationTarget::decoder_mapping) {
    PerturbationSpec decoder = p;
    decoder.agent = 1;
    Scenario::perturb_state(state, decoder);
    return;
  }
  Scenario::perturb_state(state, p);
}

std::string_view to_string(StabilityLabel label) {
  switch (label) {
    case StabilityLabel::converged:
      return "converged";
    case StabilityLabel::diverged:
      return "diverged";
    case StabilityLabel::inconclusive:
      return "inconclusive";
  }
  return "inconclusive";
}

StabilityLabel classify_error_series(std::span<const double> errors, double ratio) {
  if (errors.empty()) throw UsageError("classify_error_series: empty series");
  if (!(ratio > 0.0 && ratio < 1.0)) throw UsageError("classify_error_series: ratio must lie in (0, 1)");
  for (double e : errors)
    if (!std::isfinite(e)) return StabilityLabel::diverged;
  const double first = std::abs(errors.front());
  const double last = std::abs(errors.back());
  if (first == 0.0) return last == 0.0 ? StabilityLabel::converged : StabilityLabel::diverged;
  if (last < ratio * first) return StabilityLabel::converged;
  if (last > first / ratio) return StabilityLabel::diverged;
  return StabilityLabel::inconclusive;
}

namespace detail {

std::unique_ptr<Scenario> make_bmi(const nlohmann::json& j) {
  reject_unknown_keys(j, {"kind", "neural_dim", "command_dim", "alpha_h", "alpha_m", "noise", "target_scale", "target",
                          "encoder_init", "decoder_init", "belief_rate"});
  BmiConfig c;
  c.neural_dim = field(j, "neural_dim", c.neural_dim);
  c.command_dim = field(j, "command_dim", c.command_dim);
  c.alpha_h = field(j, "alpha_h", c.alpha_h);
  c.alpha_m = field(j, "alpha_m", c.alpha_m);
  c.noise = field(j, "noise", c.noise);
  c.target_scale = field(j, "target_scale", c.target_scale);
  const auto target = field<std::string>(j, "target", "rademacher");
  if (target == "rademacher")
    c.target = TargetDistribution::rademacher;
  else if (target == "gaussian")
    c.target = TargetDistribution::gaussian;
  else
    throw ConfigError("scenario.target", "expected 'rademacher' or 'gaussian'");
  c.encoder_init = field(j, "encoder_init", c.encoder_init);
  c.decoder_init = field(j, "decoder_init", c.decoder_init);
  c.belief_rate = field(j, "belief_rate", c.belief_rate);
  return std::make_unique<BmiCoAdaptScenario>(c);
}

}  // namespace detail

}  // namespace mie
