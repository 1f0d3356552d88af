#include <cmath>

#include "builders.hpp"
#include "mie/errors.hpp"
#include "mie/scenarios.hpp"

namespace mie {

void ToyCoAdaptConfig::validate() const {
  if (!std::isfinite(alpha_h) || alpha_h < 0.0) throw ConfigError("scenario.alpha_h", "must be finite and >= 0");
  if (!std::isfinite(alpha_m) || alpha_m < 0.0) throw ConfigError("scenario.alpha_m", "must be finite and >= 0");
  if (!std::isfinite(x0)) throw ConfigError("scenario.x0", "must be finite");
  if (!std::isfinite(y0)) throw ConfigError("scenario.y0", "must be finite");
}

ToyStepResult toy_step(double x, double y, double alpha_h, double alpha_m) {
  const double d = x - y;
  return {x - 2.0 * alpha_h * d, y + alpha_m * d, 1.0 - d * d};
}

ContractionVerdict toy_contraction_factor(double alpha_h, double alpha_m) {
  const double kappa = 1.0 - 2.0 * alpha_h - alpha_m;
  return {kappa, std::abs(kappa) < 1.0};
}

ToyCoAdaptScenario::ToyCoAdaptScenario(ToyCoAdaptConfig config) : config_(config) { config_.validate(); }

nlohmann::json ToyCoAdaptScenario::to_json() const {
  return {{"kind", "toy_coadapt"},
          {"alpha_h", config_.alpha_h},
          {"alpha_m", config_.alpha_m},
          {"x0", config_.x0},
          {"y0", config_.y0}};
}

std::unique_ptr<Scenario> ToyCoAdaptScenario::clone() const { return std::make_unique<ToyCoAdaptScenario>(*this); }

JointState ToyCoAdaptScenario::state_at(double x, double y) const {
  JointState s;
  s.agents.resize(2);
  s.agents[0].belief = BeliefState::gaussian({x});
  s.agents[1].belief = BeliefState::gaussian({y});
  s.aux = {x - y};
  return s;
}

JointState ToyCoAdaptScenario::initial_state(Rng&) const { return state_at(config_.x0, config_.y0); }

TickRecord ToyCoAdaptScenario::advance(JointState& state, std::uint64_t t, RngStreams&,
                                       const OperatorSchedule& schedule) const {
  double& x = state.agents[0].belief.mean[0];
  double& y = state.agents[1].belief.mean[0];
  double& d = state.aux[0];
  const double utility = 1.0 - d * d;

  TickRecord rec;
  rec.t = t;
  rec.actions = {0, 0};
  rec.rewards = {utility, utility};
  rec.scalars = {x, y, utility, d};
  rec.observations.resize(2);
  if (!masked_[0]) rec.observations[0].signal = y;
  if (!masked_[1]) rec.observations[1].signal = x;

  const bool human = schedule.belief_due(t) && !masked_[0];
  const bool model = schedule.belief_due(t) && !masked_[1];
  const double kappa = 1.0 - (human ? 2.0 * config_.alpha_h : 0.0) - (model ? config_.alpha_m : 0.0);
  if (human) x -= 2.0 * config_.alpha_h * d;
  if (model) y += config_.alpha_m * d;
  d *= kappa;
  if (human) state.agents[0].belief.count += 1.0;
  if (model) state.agents[1].belief.count += 1.0;
  return rec;
}

std::optional<JointState> ToyCoAdaptScenario::expected_advance(const JointState& state) const {
  JointState next = state;
  RngStreams unused;
  advance(next, 0, unused, OperatorSchedule{});
  return next;
}

std::vector<double> ToyCoAdaptScenario::behavioral_gaps(const JointState& state) const {
  const double d = state.aux.empty() ? state.agents[0].belief.mean[0] - state.agents[1].belief.mean[0] : state.aux[0];
  return {d * d, d * d};
}

std::vector<PerturbationTarget> ToyCoAdaptScenario::perturbation_targets() const {
  return {PerturbationTarget::belief, PerturbationTarget::observation_mask};
}

std::unique_ptr<Scenario> ToyCoAdaptScenario::perturbed(const PerturbationSpec& p) const {
  if (p.agent >= 2) throw UsageError("perturbation agent out of range");
  if (p.target == PerturbationTarget::observation_mask) {
    auto copy = std::make_unique<ToyCoAdaptScenario>(*this);
    if (p.magnitude != 0.0) copy->masked_[p.agent] = true;
    return copy;
  }
  return Scenario::perturbed(p);
}

void ToyCoAdaptScenario::perturb_state(JointState& state, const PerturbationSpec& p) const {
  Scenario::perturb_state(state, p);
}

void ToyCoAdaptScenario::resync(JointState& state) const {
  state.aux = {state.agents[0].belief.mean[0] - state.agents[1].belief.mean[0]};
}

namespace detail {

std::unique_ptr<Scenario> make_toy(const nlohmann::json& j) {
  reject_unknown_keys(j, {"kind", "alpha_h", "alpha_m", "x0", "y0"});
  ToyCoAdaptConfig c;
  c.alpha_h = field(j, "alpha_h", c.alpha_h);
  c.alpha_m = field(j, "alpha_m", c.alpha_m);
  c.x0 = field(j, "x0", c.x0);
  c.y0 = field(j, "y0", c.y0);
  return std::make_unique<ToyCoAdaptScenario>(c);
}

}  // namespace detail

}  // namespace mie
