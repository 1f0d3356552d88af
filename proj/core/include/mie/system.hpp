#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mie/agent.hpp"
#include "mie/game.hpp"
#include "mie/rng.hpp"

namespace mie {

/// z_t = (s_t, x_t). `aux` holds scenario quantities that are tracked
/// alongside the agents but are not part of the multilevel state x (they
/// are never flattened and are recomputed by Scenario::resync).
struct JointState {
  std::size_t env_state = 0;
  std::vector<MultilevelAgentState> agents;
  std::vector<double> aux;

  bool operator==(const JointState&) const = default;
};

struct TickRecord {
  std::uint64_t t = 0;
  std::size_t state = 0;
  JointAction actions;
  std::vector<double> rewards;
  std::size_t next_state = 0;
  std::vector<Observation> observations;
  /// Scenario scalars, named by Scenario::scalar_names().
  std::vector<double> scalars;

  bool operator==(const TickRecord&) const = default;
};

enum class PerturbationTarget { reward_contingency, policy, belief, neural_params, observation_mask, decoder_mapping };
enum class PerturbationMode { additive, replace };

std::string_view to_string(PerturbationTarget target);
PerturbationTarget perturbation_target_from_string(std::string_view name);

/// Applied between ticks, immediately before tick `tick` runs.
///
/// additive: value += magnitude * payload
/// replace:  value += magnitude * (payload - value)
/// A zero magnitude is therefore always a no-op. observation_mask ignores the
/// payload and masks the target agent's observations from `tick` on when
/// magnitude != 0.
struct PerturbationSpec {
  std::uint64_t tick = 0;
  PerturbationTarget target = PerturbationTarget::belief;
  std::size_t agent = 0;
  PerturbationMode mode = PerturbationMode::additive;
  std::vector<double> payload;
  double magnitude = 1.0;

  bool operator==(const PerturbationSpec&) const = default;
};

nlohmann::json perturbation_to_json(const PerturbationSpec& p);
PerturbationSpec perturbation_from_json(const nlohmann::json& j);

/// Applies `p` to `values` per the additive/replace rule. A payload of size 1
/// broadcasts.
void apply_delta(std::span<double> values, const PerturbationSpec& p);

/// Uniform interface over every bundled instantiation of the coupled system.
class Scenario {
 public:
  virtual ~Scenario() = default;

  virtual std::string kind() const = 0;
  /// Complete configuration; make_scenario(to_json()) rebuilds an equal scenario.
  virtual nlohmann::json to_json() const = 0;
  virtual std::size_t num_agents() const = 0;
  virtual std::unique_ptr<Scenario> clone() const = 0;

  /// Underlying tabular game, when the scenario has one.
  virtual const TabularMarkovGame* game() const { return nullptr; }

  /// Initial joint state. `environment` draws s_0 when the scenario has an
  /// initial distribution.
  virtual JointState initial_state(Rng& environment) const = 0;

  virtual std::vector<std::string> scalar_names() const { return {}; }

  /// One application of the joint operator Phi; mutates `state`.
  virtual TickRecord advance(JointState& state, std::uint64_t t, RngStreams& rng,
                             const OperatorSchedule& schedule) const = 0;

  /// E[Phi(state)] computed exactly, when the scenario can enumerate its
  /// randomness. The returned env_state equals the input's.
  virtual std::optional<JointState> expected_advance(const JointState&) const { return std::nullopt; }

  /// Per-agent best-response gap at the current joint state.
  virtual std::vector<double> behavioral_gaps(const JointState& state) const = 0;

  virtual std::vector<PerturbationTarget> perturbation_targets() const = 0;

  /// Environment-level perturbations (reward contingencies, masks, ...)
  /// return a modified copy. State-level targets return a plain clone.
  virtual std::unique_ptr<Scenario> perturbed(const PerturbationSpec& p) const;

  /// State-level perturbations (policy, belief, neural parameters, ...).
  virtual void perturb_state(JointState& state, const PerturbationSpec& p) const;

  /// Restore aux quantities and derived caches after the multilevel part of
  /// `state` was overwritten (unflatten, perturbation).
  virtual void resync(JointState&) const {}

  bool supports(PerturbationTarget target) const;
};

// ---------------------------------------------------------------------------
// Flattening of x = (theta, b, pi)
// ---------------------------------------------------------------------------
//
// Order: theta of every agent, then beliefs of every agent, then policies of
// every agent. Categorical beliefs and policy rows drop their last
// coordinate (it is implied by the simplex constraint); gaussian beliefs
// contribute their mean. Nested beliefs follow their parent.

std::vector<double> flatten(const JointState& state);

/// Inverse of flatten using `like` for shapes and for every unflattened field.
JointState unflatten(const JointState& like, std::span<const double> x);

/// Human-readable names of the flattened coordinates.
std::vector<std::string> coordinate_names(const JointState& state);

struct LevelSizes {
  std::size_t theta = 0;
  std::size_t belief = 0;
  std::size_t policy = 0;
};
LevelSizes level_sizes(const JointState& state);

/// Per-level drift between two joint states: l2 over all theta, l1 over all
/// belief values, total variation summed over states and agents for pi.
struct LevelDrift {
  double theta = 0.0;
  double belief = 0.0;
  double policy = 0.0;
};
LevelDrift level_drift(const JointState& from, const JointState& to);

nlohmann::json joint_state_to_json(const JointState& state);
JointState joint_state_from_json(const nlohmann::json& j);

nlohmann::json observation_to_json(const Observation& o);
Observation observation_from_json(const nlohmann::json& j);

}  // namespace mie
