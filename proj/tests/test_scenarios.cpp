#include <gtest/gtest.h>

#include <cmath>
#include <deque>
#include <random>
#include <set>

#include "mie/equilibrium.hpp"
#include "mie/errors.hpp"
#include "mie/scenarios.hpp"

namespace mie {
namespace {

RunConfig run(std::uint64_t seed, std::uint64_t horizon, std::uint64_t cadence = 100) {
  RunConfig c;
  c.seed = seed;
  c.horizon = horizon;
  c.snapshot_cadence = cadence;
  return c;
}

TEST(Toy, StepExamples) {
  auto r = toy_step(0.5, 0.5, 0.2, 0.3);
  EXPECT_EQ(r.x, 0.5);
  EXPECT_EQ(r.y, 0.5);
  EXPECT_EQ(r.utility, 1.0);
  r = toy_step(0.9, 0.1, 0.2, 0.3);
  EXPECT_NEAR(r.x, 0.58, 1e-15);
  EXPECT_NEAR(r.y, 0.34, 1e-15);
  EXPECT_NEAR(r.utility, 0.36, 1e-15);
  EXPECT_EQ(toy_step(0.0, 1.0, 0.2, 0.3).utility, 0.0);
}

TEST(Toy, ContractionFactor) {
  EXPECT_NEAR(toy_contraction_factor(0.2, 0.3).kappa, 0.3, 1e-15);
  EXPECT_TRUE(toy_contraction_factor(0.2, 0.3).converges);
  EXPECT_NEAR(toy_contraction_factor(0.6, 0.9).kappa, -1.1, 1e-15);
  EXPECT_FALSE(toy_contraction_factor(0.6, 0.9).converges);
  EXPECT_EQ(toy_contraction_factor(0.25, 0.5).kappa, 0.0);
}

TEST(Toy, ZeroKappaConvergesInOneStep) {
  ToyCoAdaptScenario toy({0.25, 0.5, 0.9, 0.1});
  const auto log = rollout(toy, run(0, 3, 1));
  EXPECT_EQ(log.ticks[1].scalars[3], 0.0);
  EXPECT_EQ(log.ticks[1].scalars[0], log.ticks[1].scalars[1]);
}

TEST(Toy, PropertyConservedQuantity) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double ah = 0.4 * u(rng), am = 0.5 * u(rng), x0 = u(rng), y0 = u(rng);
    ToyCoAdaptScenario toy({ah, am, x0, y0});
    const double invariant = am * x0 + 2 * ah * y0;
    const auto log = rollout(toy, run(0, 20, 1));
    for (const auto& t : log.ticks) EXPECT_NEAR(am * t.scalars[0] + 2 * ah * t.scalars[1], invariant, 1e-12);
  }
}

TEST(MatrixGames, Payoffs) {
  const auto mp = matrix_game("matching_pennies");
  const auto pd = matrix_game("prisoners_dilemma");
  auto j = [&](const TabularMarkovGame& g, std::size_t a, std::size_t b) {
    return g.joint_index(std::array<std::size_t, 2>{a, b});
  };
  EXPECT_EQ(mp.reward(0, j(mp, 1, 1), 0), 1.0);
  EXPECT_EQ(mp.reward(0, j(mp, 0, 1), 0), -1.0);
  EXPECT_EQ(pd.reward(0, j(pd, 1, 0), 0), 5.0);
  EXPECT_EQ(pd.reward(0, j(pd, 1, 0), 1), 0.0);
  EXPECT_EQ(pd.reward(0, j(pd, 0, 0), 0), 3.0);
  EXPECT_EQ(pd.reward(0, j(pd, 1, 1), 1), 1.0);
  EXPECT_THROW(matrix_game("chicken"), ConfigError);
}

TEST(MatrixGames, PureNashProfiles) {
  auto pure = [](std::size_t a) { return StochasticPolicy::deterministic(1, 2, std::array<std::size_t, 1>{a}); };
  const auto pd = matrix_game("prisoners_dilemma", 0.9);
  for (std::size_t a = 0; a < 2; ++a) {
    for (std::size_t b = 0; b < 2; ++b) {
      const std::vector<StochasticPolicy> joint{pure(a), pure(b)};
      const bool nash = brgap(pd, joint, 0) < 1e-9 && brgap(pd, joint, 1) < 1e-9;
      EXPECT_EQ(nash, a == 1 && b == 1);
    }
  }
  const auto co = matrix_game("coordination", 0.9);
  for (std::size_t a = 0; a < 2; ++a) {
    const std::vector<StochasticPolicy> joint{pure(a), pure(a)};
    EXPECT_NEAR(brgap(co, joint, 0), 0.0, 1e-9);
    EXPECT_NEAR(brgap(co, joint, 1), 0.0, 1e-9);
  }
}

TEST(MatrixGames, LearnerConfigErrors) {
  const nlohmann::json bad_kind{{"kind", "matrix_game"}, {"agents", {{{"learner", "oracle"}}, nlohmann::json::object()}}};
  try {
    make_scenario(bad_kind);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "scenario.agents[0].learner");
  }
  EXPECT_THROW(make_scenario({{"kind", "matrix_game"}, {"payoffs", 1}}), ConfigError);
}

TEST(Highway, GameValidatesAndAbsorbs) {
  HighwayMergeConfig c;
  const auto g = highway_merge_game(c);
  EXPECT_TRUE(validate_game(g).ok()) << validate_game(g).summary();
  const HighwayLayout l{c.ramp_length, c.gap_levels};
  for (std::size_t s : {l.merged(), l.collided()}) {
    EXPECT_TRUE(g.is_absorbing(s));
    for (std::size_t j = 0; j < g.num_joint_actions(); ++j)
      for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(g.reward(s, j, i), 0.0);
  }
  c.gap_noise = 0.2;
  EXPECT_TRUE(validate_game(highway_merge_game(c)).ok());
}

TEST(Highway, YieldThenMergeReachesMerged) {
  HighwayMergeConfig c;
  const auto g = highway_merge_game(c);
  const HighwayLayout l{c.ramp_length, c.gap_levels};
  auto human = [&](std::size_t s) {
    const std::size_t gap = s % c.gap_levels;
    return std::min(gap + 1, c.gap_levels - 1) >= c.safe_gap ? highway::kAccelerate : highway::kHold;
  };
  std::set<std::size_t> seen;
  std::deque<std::size_t> frontier;
  for (std::size_t s = 0; s < g.num_states; ++s)
    if (g.initial_dist[s] > 0) frontier.push_back(s);
  while (!frontier.empty()) {
    const std::size_t s = frontier.front();
    frontier.pop_front();
    if (!seen.insert(s).second || s >= l.merged()) continue;
    const std::array<std::size_t, 2> a{human(s), highway::kYield};
    const std::size_t j = g.joint_index(a);
    for (std::size_t n = 0; n < g.num_states; ++n)
      if (g.probability(s, j, n) > 0) frontier.push_back(n);
  }
  EXPECT_TRUE(seen.count(l.merged()));
  EXPECT_FALSE(seen.count(l.collided()));
}

TEST(Highway, LearnersMergeWithoutCollisionMostly) {
  const auto s = build_highway_merge({});
  const auto log = rollout(*s, run(1, 3000));
  const HighwayLayout l{4, 4};
  std::size_t merged = 0, collided = 0;
  for (const auto& t : log.ticks) {
    merged += t.next_state == l.merged();
    collided += t.next_state == l.collided();
  }
  EXPECT_GT(merged, 10 * collided);
}

TEST(Bmi, FrozenDecoderGeometricDecay) {
  BmiConfig c;
  c.alpha_h = 0.2;
  c.alpha_m = 0.0;
  BmiCoAdaptScenario bmi(c);
  const auto log = rollout(bmi, run(3, 60));
  const auto rec = bmi_recursion(c);
  for (std::size_t t = 1; t < log.ticks.size(); ++t) {
    EXPECT_LT(log.ticks[t].scalars[0], log.ticks[t - 1].scalars[0]);
    EXPECT_NEAR(log.ticks[t].scalars[1] / log.ticks[t - 1].scalars[1], rec.factor(0.2, 0.0), 1e-12);
  }
}

TEST(Bmi, FrozenBothConstant) {
  BmiConfig c;
  c.alpha_h = 0.0;
  c.alpha_m = 0.0;
  BmiCoAdaptScenario bmi(c);
  const auto log = rollout(bmi, run(3, 50));
  for (const auto& t : log.ticks) EXPECT_EQ(t.scalars[0], log.ticks[0].scalars[0]);
}

TEST(Bmi, ScalarRolloutMatchesHandRecursion) {
  BmiConfig c;
  c.alpha_h = 0.8;
  c.alpha_m = 0.3;
  c.belief_rate = 0.5;
  BmiCoAdaptScenario bmi(c);
  const auto log = rollout(bmi, run(5, 80));
  double e = 1.0, d = 0.5, d_hat = 0.5;
  for (const auto& t : log.ticks) {
    EXPECT_NEAR(t.scalars[1], std::abs(d * e - 1.0), 1e-12) << t.t;
    e -= c.alpha_h * d_hat * (d * e - 1.0);
    d -= c.alpha_m * (d * e - 1.0) * e;
    d_hat += c.belief_rate * (d - d_hat);
  }
}

TEST(Bmi, MeanRecursionPredictsGrid) {
  BmiConfig c;
  std::size_t total = 0;
  bool corner = false, large_diverges = false;
  for (double ah : {0.05, 0.2, 0.8, 3.0, 9.0}) {
    for (double am : {0.01, 0.1, 0.5, 2.0, 5.0}) {
      c.alpha_h = ah;
      c.alpha_m = am;
      const auto pred = bmi_mean_recursion(c);
      if (pred.converges && pred.steps > 300) continue;
      BmiCoAdaptScenario bmi(c);
      const auto log = rollout(bmi, run(1, 400));
      std::vector<double> errs;
      for (const auto& t : log.ticks) errs.push_back(t.scalars[1]);
      const auto label = classify_error_series(errs);
      ++total;
      EXPECT_EQ(label == StabilityLabel::converged, pred.converges) << ah << ' ' << am;
      if (pred.converges) {
        EXPECT_LE(std::abs(bmi_recursion(c, pred.encoder, pred.decoder).factor(ah, am)), 1.0 + 1e-9) << ah << ' ' << am;
        corner |= am < 0.05 && ah >= 0.2;
      } else {
        large_diverges |= am >= 2.0;
      }
    }
  }
  EXPECT_GT(total, 15u);
  EXPECT_TRUE(corner);
  EXPECT_TRUE(large_diverges);
}

TEST(Bmi, MultiDimensionalRuns) {
  BmiConfig c;
  c.neural_dim = 4;
  c.command_dim = 2;
  c.noise = 0.05;
  c.target = TargetDistribution::gaussian;
  BmiCoAdaptScenario bmi(c);
  const auto log = rollout(bmi, run(2, 3000));
  EXPECT_LT(log.ticks.back().scalars[1], log.ticks.front().scalars[1]);
}

TEST(Pathological, DepressionFixedPoint) {
  PathologicalScenario dep(PathologicalConfig::defaults(PathologyVariant::depression));
  EXPECT_NEAR(dep.analytic_belief_fixed_point(), 0.3, 1e-15);
  const double b = 0.3;
  const double mean = 0.8 * dep.belief_update(b, 1.0) + 0.2 * dep.belief_update(b, 0.0);
  EXPECT_NEAR(mean, b, 1e-15);
}

TEST(Pathological, AnxiousAvoidanceFreezesBelief) {
  PathologicalScenario anx(PathologicalConfig::defaults(PathologyVariant::anxiety));
  const auto log = rollout(anx, run(5, 2000));
  for (const auto& t : log.ticks) {
    EXPECT_EQ(t.actions[0], pathology::kWithdraw);
    EXPECT_EQ(t.scalars[0], 0.9);
  }
}

TEST(Pathological, ForcedApproachCorrectsBelief) {
  PathologicalScenario anx(PathologicalConfig::defaults(PathologyVariant::anxiety));
  PerturbationSpec p;
  p.tick = 10;
  p.target = PerturbationTarget::policy;
  p.mode = PerturbationMode::replace;
  p.payload = {1.0, 0.0, 1.0, 0.0};
  const auto log = rollout_with_perturbation(anx, run(5, 400), p);
  double late = 0.0;
  for (std::size_t t = 300; t < 400; ++t) late += log.ticks[t].scalars[0];
  EXPECT_NEAR(late / 100.0, 0.1, 0.05);
}

TEST(Factory, EveryKindRoundTrips) {
  for (const auto& kind : scenario_kinds()) {
    nlohmann::json cfg{{"kind", kind}};
    if (kind == "tabular") cfg["game"] = game_to_json(matrix_game("coordination"));
    const auto s = make_scenario(cfg);
    EXPECT_EQ(s->kind(), kind);
    EXPECT_EQ(make_scenario(s->to_json())->to_json(), s->to_json());
  }
}

TEST(Factory, Errors) {
  try {
    make_scenario({{"alpha_h", 1}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "scenario.kind");
  }
  EXPECT_THROW(make_scenario({{"kind", "weather"}}), ConfigError);
  try {
    make_scenario({{"kind", "toy_coadapt"}, {"alpha", 1}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "scenario.alpha");
  }
}

TEST(Tabular, UserGameWithLearners) {
  nlohmann::json cfg{{"kind", "tabular"}, {"game", game_to_json(matrix_game("prisoners_dilemma"))}};
  const auto s = make_scenario(cfg);
  const auto log = rollout(*s, run(4, 200));
  EXPECT_EQ(log.ticks.size(), 200u);
  EXPECT_TRUE(replay(log, *s).ok);
}

}  // namespace
}  // namespace mie
