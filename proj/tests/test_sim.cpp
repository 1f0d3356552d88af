#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mie/errors.hpp"
#include "mie/scenarios.hpp"
#include "mie/sim.hpp"

namespace mie {
namespace {

RunConfig run(std::uint64_t seed, std::uint64_t horizon, std::uint64_t cadence = 10) {
  RunConfig c;
  c.seed = seed;
  c.horizon = horizon;
  c.snapshot_cadence = cadence;
  return c;
}

TEST(Rollout, HorizonZeroRejected) {
  ToyCoAdaptScenario toy({});
  EXPECT_THROW(rollout(toy, run(0, 0)), ConfigError);
}

TEST(Rollout, HorizonOne) {
  ToyCoAdaptScenario toy({});
  const auto log = rollout(toy, run(0, 1));
  EXPECT_EQ(log.ticks.size(), 1u);
  ASSERT_FALSE(log.snapshots.empty());
  EXPECT_EQ(log.snapshots.front().t, 0u);
  ASSERT_TRUE(log.final_state);
  EXPECT_EQ(log.final_state->t, 1u);
}

TEST(Rollout, SameSeedByteIdentical) {
  const auto s = build_matrix_game("matching_pennies", 5.0, 0.1, LearnerKind::fictitious_play);
  EXPECT_EQ(serialize_log(rollout(*s, run(42, 500))), serialize_log(rollout(*s, run(42, 500))));
  EXPECT_NE(serialize_log(rollout(*s, run(42, 500))), serialize_log(rollout(*s, run(43, 500))));
}

TEST(Rollout, ToyMismatchClosedForm) {
  ToyCoAdaptScenario toy({0.2, 0.3, 0.9, 0.1});
  const auto log = rollout(toy, run(0, 10, 1));
  for (const auto& t : log.ticks) {
    const double x = t.scalars[0];
    const double y = t.scalars[1];
    EXPECT_NEAR(std::abs(x - y), 0.8 * std::pow(0.3, double(t.t)), 1e-15);
    EXPECT_NEAR(std::abs(t.scalars[3]), 0.8 * std::pow(0.3, double(t.t)), 1e-15 * std::pow(0.3, double(t.t)));
  }
}

TEST(Rollout, SnapshotCadence) {
  ToyCoAdaptScenario toy({});
  const auto log = rollout(toy, run(0, 25, 10));
  ASSERT_EQ(log.snapshots.size(), 3u);
  EXPECT_EQ(log.snapshots[1].t, 10u);
  EXPECT_EQ(log.snapshots[2].t, 20u);
  EXPECT_NE(log.snapshot_at(20), nullptr);
  EXPECT_EQ(log.snapshot_at(15), nullptr);
}

TEST(Perturbation, ZeroMagnitudeIsNoOp) {
  const auto s = build_matrix_game("prisoners_dilemma", 4.0, 0.1, LearnerKind::q_learner);
  PerturbationSpec p;
  p.tick = 30;
  p.target = PerturbationTarget::neural_params;
  p.payload = {5.0};
  p.magnitude = 0.0;
  const auto plain = rollout(*s, run(3, 100));
  const auto perturbed = rollout_with_perturbation(*s, run(3, 100), p);
  EXPECT_EQ(plain.ticks, perturbed.ticks);
  EXPECT_EQ(plain.snapshots, perturbed.snapshots);
}

TEST(Perturbation, ToyReconvergesGeometrically) {
  ToyCoAdaptScenario toy({0.2, 0.3, 0.5, 0.5});
  PerturbationSpec p;
  p.tick = 5;
  p.target = PerturbationTarget::belief;
  p.agent = 1;
  p.mode = PerturbationMode::replace;
  p.payload = {0.6};
  const auto log = rollout_with_perturbation(toy, run(0, 30, 1), p);
  for (const auto& t : log.ticks) {
    if (t.t < 5) {
      EXPECT_EQ(t.scalars[3], 0.0);
    } else {
      const double expect = 0.1 * std::pow(0.3, double(t.t - 5));
      EXPECT_NEAR(std::abs(t.scalars[3]), expect, 1e-12 * expect);
    }
  }
}

TEST(Perturbation, PrefixBitExact) {
  const auto s = build_matrix_game("coordination", 3.0, 0.2, LearnerKind::q_learner);
  PerturbationSpec p;
  p.tick = 40;
  p.target = PerturbationTarget::reward_contingency;
  p.payload = {1.0};
  const auto plain = rollout(*s, run(8, 100, 5));
  const auto perturbed = rollout_with_perturbation(*s, run(8, 100, 5), p);
  for (std::size_t t = 0; t < 40; ++t) EXPECT_EQ(plain.ticks[t], perturbed.ticks[t]);
  for (const auto& snap : plain.snapshots)
    if (snap.t < 40) EXPECT_EQ(*perturbed.snapshot_at(snap.t), snap);
}

TEST(Perturbation, ObservationMaskFreezesBelief) {
  const auto s = build_matrix_game("matching_pennies", 5.0, 0.1, LearnerKind::fictitious_play);
  PerturbationSpec p;
  p.tick = 20;
  p.target = PerturbationTarget::observation_mask;
  p.agent = 0;
  const auto log = rollout_with_perturbation(*s, run(2, 200, 10), p);
  const auto* at = log.snapshot_at(20);
  ASSERT_NE(at, nullptr);
  for (const auto& snap : log.snapshots)
    if (snap.t >= 20) EXPECT_EQ(snap.state.agents[0].belief, at->state.agents[0].belief);
  EXPECT_NE(log.snapshots.back().state.agents[1].belief, at->state.agents[1].belief);
}

TEST(Perturbation, TickBeyondHorizonRejected) {
  ToyCoAdaptScenario toy({});
  PerturbationSpec p;
  p.tick = 50;
  p.payload = {0.1};
  EXPECT_THROW(rollout_with_perturbation(toy, run(0, 10), p), ConfigError);
}

TEST(Replay, UnmodifiedLogSucceeds) {
  const auto s = build_matrix_game("matching_pennies", 2.0, 0.3, LearnerKind::q_learner);
  const auto log = rollout(*s, run(5, 200));
  EXPECT_TRUE(replay(log, *s).ok);
}

TEST(Replay, FlippedActionDetected) {
  const auto s = build_matrix_game("matching_pennies", 2.0, 0.3, LearnerKind::q_learner);
  auto log = rollout(*s, run(5, 200));
  log.ticks[73].actions[1] ^= 1u;
  const auto r = replay(log, *s);
  EXPECT_FALSE(r.ok);
  ASSERT_TRUE(r.divergence_tick);
  EXPECT_EQ(*r.divergence_tick, 73u);
}

TEST(Replay, OtherSeedDivergesAtFirstDifferentDraw) {
  const auto s = build_matrix_game("matching_pennies", 1.0, 0.3, LearnerKind::q_learner);
  const auto a = rollout(*s, run(1, 200));
  const auto b = rollout(*s, run(2, 200));
  std::uint64_t first = 200;
  for (std::size_t t = 0; t < 200; ++t) {
    if (!(a.ticks[t] == b.ticks[t])) {
      first = t;
      break;
    }
  }
  ASSERT_LT(first, 200u);
  auto forged = b;
  forged.header = a.header;
  const auto r = replay(forged, *s);
  ASSERT_TRUE(r.divergence_tick);
  EXPECT_EQ(*r.divergence_tick, first);
}

TEST(Replay, TamperedHashRejected) {
  ToyCoAdaptScenario toy({});
  auto log = rollout(toy, run(0, 5));
  log.header.config_hash = "0000000000000000";
  EXPECT_THROW(replay(log, toy), ConfigError);
}

TEST(Log, RoundTrip) {
  for (const auto& s : {build_matrix_game("coordination", 2.0, 0.1, LearnerKind::q_learner)}) {
    PerturbationSpec p;
    p.tick = 12;
    p.target = PerturbationTarget::policy;
    p.payload = {0.1};
    const auto log = rollout_with_perturbation(*s, run(11, 37, 5), p);
    const auto back = parse_log(serialize_log(log));
    EXPECT_EQ(back, log);
    EXPECT_EQ(serialize_log(back), serialize_log(log));
  }
  ToyCoAdaptScenario toy({});
  const auto log = rollout(toy, run(0, 20, 3));
  EXPECT_EQ(parse_log(serialize_log(log)), log);
}

TEST(Log, TruncationNamesTick) {
  ToyCoAdaptScenario toy({});
  const auto text = serialize_log(rollout(toy, run(0, 40, 10)));
  try {
    parse_log(text.substr(0, text.size() / 2));
    FAIL();
  } catch (const LogFormatError& e) {
    EXPECT_GT(e.line(), 1u);
    EXPECT_GE(e.tick(), 0);
  }
  std::string no_final = text.substr(0, text.rfind('\n', text.size() - 2) + 1);
  EXPECT_THROW(parse_log(no_final), LogFormatError);
}

TEST(Log, HashIgnoresSeedOnly) {
  ToyCoAdaptScenario toy({});
  const auto a = config_hash(toy.to_json(), run(1, 10), std::nullopt);
  EXPECT_EQ(a, config_hash(toy.to_json(), run(2, 10), std::nullopt));
  EXPECT_NE(a, config_hash(toy.to_json(), run(1, 11), std::nullopt));
  EXPECT_EQ(a.size(), 16u);
}

TEST(Log, SeriesCsvHeader) {
  ToyCoAdaptScenario toy({});
  std::ostringstream out;
  write_series_csv(rollout(toy, run(0, 3)), out);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "t,x,y,U,d,r_0,r_1");
}

TEST(Parallel, OrderFollowsIndex) {
  const std::function<std::size_t(std::size_t)> job = [](std::size_t k) { return k * k; };
  const auto out = run_parallel(100, 4, job);
  for (std::size_t k = 0; k < 100; ++k) EXPECT_EQ(out[k], k * k);
}

TEST(Parallel, FailurePropagates) {
  const std::function<int(std::size_t)> job = [](std::size_t k) -> int {
    if (k == 7) throw NumericalError("boom");
    return 0;
  };
  EXPECT_THROW(run_parallel(20, 3, job), NumericalError);
}

}  // namespace
}  // namespace mie
