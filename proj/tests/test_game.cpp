#include <gtest/gtest.h>

#include <array>
#include <random>

#include "mie/errors.hpp"
#include "mie/game.hpp"
#include "mie/mdp.hpp"
#include "mie/scenarios.hpp"
#include "oracles.hpp"

namespace mie {
namespace {

bool has_code(const ValidationResult& r, const std::string& code) {
  for (const auto& v : r.violations)
    if (v.code == code) return true;
  return false;
}

TEST(Game, BundledMatrixGamesValidate) {
  for (const char* name : {"matching_pennies", "prisoners_dilemma", "coordination"})
    EXPECT_TRUE(validate_game(matrix_game(name)).ok()) << name;
}

TEST(Game, ShortRowNamesStateAndJointAction) {
  auto g = matrix_game("matching_pennies");
  const std::array<std::size_t, 2> ht{0, 1};
  g.probability(0, g.joint_index(ht), 0) = 0.9;
  const auto r = validate_game(g);
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(r.violations[0].code, "row_sum");
  EXPECT_EQ(r.violations[0].state, 0u);
  EXPECT_EQ(r.violations[0].actions, (JointAction{0, 1}));
}

TEST(Game, NegativeProbabilityFlagged) {
  auto g = TabularMarkovGame::zeros(2, {2});
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t a = 0; a < 2; ++a) g.probability(s, a, 0) = 1.0;
  g.probability(1, 1, 0) = 1.1;
  g.probability(1, 1, 1) = -0.1;
  EXPECT_TRUE(has_code(validate_game(g), "negative_probability"));
}

TEST(Game, OtherViolations) {
  auto g = matrix_game("coordination");
  g.discount = 1.0;
  EXPECT_TRUE(has_code(validate_game(g), "discount"));
  g = matrix_game("coordination");
  g.rewards[0] = std::nan("");
  EXPECT_TRUE(has_code(validate_game(g), "non_finite_reward"));
  g = matrix_game("coordination");
  g.initial_dist = {0.5};
  EXPECT_TRUE(has_code(validate_game(g), "initial_dist"));
  g = matrix_game("coordination");
  g.transition.pop_back();
  EXPECT_TRUE(has_code(validate_game(g), "shape"));
}

TEST(Game, JointIndexRoundTrip) {
  auto g = TabularMarkovGame::zeros(1, {2, 3, 4});
  for (std::size_t j = 0; j < g.num_joint_actions(); ++j) EXPECT_EQ(g.joint_index(g.joint_action(j)), j);
  const std::array<std::size_t, 3> a{1, 0, 0};
  EXPECT_EQ(g.joint_index(a), 12u);
}

TEST(Game, StepDeterministicRow) {
  auto g = TabularMarkovGame::zeros(3, {1});
  for (std::size_t s = 0; s < 3; ++s) g.probability(s, 0, (s + 1) % 3) = 1.0;
  Rng rng(5);
  const std::array<std::size_t, 1> a{0};
  for (int k = 0; k < 100; ++k) EXPECT_EQ(step(g, 1, a, rng).next_state, 2u);
}

TEST(Game, MatchingPenniesBothHeads) {
  const auto g = matrix_game("matching_pennies");
  Rng rng(1);
  const std::array<std::size_t, 2> heads{0, 0};
  const auto r = step(g, 0, heads, rng);
  EXPECT_EQ(r.rewards, (std::vector<double>{1.0, -1.0}));
}

TEST(Game, StepSampleFrequency) {
  auto g = TabularMarkovGame::zeros(2, {1});
  g.probability(0, 0, 0) = 0.25;
  g.probability(0, 0, 1) = 0.75;
  g.probability(1, 0, 1) = 1.0;
  Rng rng(2024);
  const std::array<std::size_t, 1> a{0};
  std::size_t ones = 0;
  const std::size_t n = 100'000;
  for (std::size_t k = 0; k < n; ++k) ones += step(g, 0, a, rng).next_state;
  EXPECT_NEAR(double(ones) / double(n), 0.75, 0.01);
}

TEST(Game, StepRejectsBadAction) {
  const auto g = matrix_game("coordination");
  Rng rng(1);
  const std::array<std::size_t, 2> bad{0, 2};
  EXPECT_THROW(step(g, 0, bad, rng), UsageError);
}

TEST(Game, InducedMdpDeterministicOpponentIsSlice) {
  std::mt19937_64 rng(3);
  const auto g = oracle::random_game(rng, 3, {2, 2}, 0.9);
  const std::array<std::size_t, 3> opp{1, 0, 1};
  const std::vector<StochasticPolicy> joint{StochasticPolicy::uniform(3, 2), StochasticPolicy::deterministic(3, 2, opp)};
  const auto m = single_agent_mdp(g, 0, joint);
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t a = 0; a < 2; ++a) {
      const std::array<std::size_t, 2> ja{a, opp[s]};
      const std::size_t j = g.joint_index(ja);
      EXPECT_DOUBLE_EQ(m.reward_of(s, a), g.reward(s, j, 0));
      for (std::size_t n = 0; n < 3; ++n) EXPECT_DOUBLE_EQ(m.probability(s, a, n), g.probability(s, j, n));
    }
  }
}

TEST(Game, InducedMdpUniformOpponentAverages) {
  std::mt19937_64 rng(4);
  const auto g = oracle::random_game(rng, 3, {2, 2}, 0.9);
  const std::vector<StochasticPolicy> joint{StochasticPolicy::uniform(3, 2), StochasticPolicy::uniform(3, 2)};
  const auto m = single_agent_mdp(g, 1, joint);
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t a = 0; a < 2; ++a) {
      const std::size_t j0 = g.joint_index(std::array<std::size_t, 2>{0, a});
      const std::size_t j1 = g.joint_index(std::array<std::size_t, 2>{1, a});
      EXPECT_NEAR(m.reward_of(s, a), 0.5 * (g.reward(s, j0, 1) + g.reward(s, j1, 1)), 1e-15);
      double total = 0.0;
      for (std::size_t n = 0; n < 3; ++n) {
        EXPECT_NEAR(m.probability(s, a, n), 0.5 * (g.probability(s, j0, n) + g.probability(s, j1, n)), 1e-15);
        total += m.probability(s, a, n);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Game, JsonRoundTrip) {
  std::mt19937_64 rng(9);
  const auto g = oracle::random_game(rng, 2, {2, 3}, 0.8);
  const auto back = game_from_json(game_to_json(g));
  EXPECT_EQ(back.transition, g.transition);
  EXPECT_EQ(back.rewards, g.rewards);
  EXPECT_EQ(back.initial_dist, g.initial_dist);
  EXPECT_EQ(back.discount, g.discount);
}

TEST(Game, JsonErrorsNameKeys) {
  try {
    game_from_json(nlohmann::json{{"num_states", 2}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_FALSE(e.key().empty());
  }
}

// ---------------------------------------------------------------------------

Mdp random_mdp(std::mt19937_64& rng, std::size_t S, std::size_t A, double gamma) {
  const auto g = oracle::random_game(rng, S, {A}, gamma);
  const std::vector<StochasticPolicy> joint{StochasticPolicy::uniform(S, A)};
  return single_agent_mdp(g, 0, joint);
}

TEST(Mdp, EvaluatePolicyMatchesOracleSolve) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const auto g = oracle::random_game(rng, 4, {3}, 0.9);
    const auto pi = oracle::random_policy(rng, 4, 3);
    const std::vector<StochasticPolicy> joint{pi};
    const auto m = single_agent_mdp(g, 0, joint);
    EXPECT_NEAR(initial_value(m, evaluate_policy(m, pi)), oracle::joint_value(g, joint, 0), 1e-10);
  }
}

TEST(Mdp, OptimalBeatsEveryDeterministicPolicy) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = random_mdp(rng, 3, 3, 0.9);
    const auto opt = solve_optimal(m);
    std::vector<std::size_t> choice(3, 0);
    double best = -INFINITY;
    for (;;) {
      const auto v = evaluate_policy(m, StochasticPolicy::deterministic(3, 3, choice));
      for (std::size_t s = 0; s < 3; ++s) EXPECT_LE(v[s], opt.values[s] + 1e-9);
      best = std::max(best, initial_value(m, v));
      std::size_t k = 0;
      while (k < 3 && ++choice[k] == 3) choice[k++] = 0;
      if (k == 3) break;
    }
    EXPECT_NEAR(initial_value(m, opt.values), best, 1e-10);
  }
}

TEST(Mdp, ValueIterationBellmanResidualHasSmallSpan) {
  std::mt19937_64 rng(13);
  const auto m = random_mdp(rng, 5, 2, 0.95);
  const auto vi = value_iteration(m, 1e-12);
  double lo = INFINITY, hi = -INFINITY;
  for (std::size_t s = 0; s < m.num_states; ++s) {
    double best = -INFINITY;
    for (std::size_t a = 0; a < m.num_actions; ++a) {
      double q = m.reward_of(s, a);
      for (std::size_t n = 0; n < m.num_states; ++n) q += m.discount * m.probability(s, a, n) * vi.values[n];
      best = std::max(best, q);
    }
    lo = std::min(lo, best - vi.values[s]);
    hi = std::max(hi, best - vi.values[s]);
  }
  EXPECT_LT(hi - lo, 1e-11);
  EXPECT_EQ(vi.greedy, solve_optimal(m).policy);
}

TEST(Mdp, ValueIterationIterationCap) {
  std::mt19937_64 rng(14);
  const auto m = random_mdp(rng, 3, 2, 0.99);
  EXPECT_THROW(value_iteration(m, 1e-14, 3), NumericalError);
}

}  // namespace
}  // namespace mie
