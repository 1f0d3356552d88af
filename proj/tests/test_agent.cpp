#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mie/agent.hpp"
#include "mie/errors.hpp"
#include "mie/scenarios.hpp"

namespace mie {
namespace {

Observation seen() {
  Observation o;
  o.opponent_actions = std::vector<std::size_t>{0};
  return o;
}

TEST(Softmax, SmallBetaIsUniform) {
  const std::vector<double> q{3.0, -2.0, 7.5};
  for (double p : softmax(q, 1e-9)) EXPECT_NEAR(p, 1.0 / 3.0, 1e-6);
}

TEST(Softmax, TwoActionsUnitBeta) {
  const std::vector<double> q{1.0, 0.0};
  const auto p = softmax(q, 1.0);
  EXPECT_NEAR(p[0], std::exp(1.0) / (1.0 + std::exp(1.0)), 1e-15);
  EXPECT_NEAR(p[0], 0.73106, 1e-5);
  EXPECT_NEAR(p[1], 0.26894, 1e-5);
}

TEST(Softmax, LargeBetaConcentrates) {
  const std::vector<double> q{5.0, 0.0};
  EXPECT_GT(softmax(q, 50.0)[0], 1.0 - 1e-9);
}

TEST(Softmax, PropertySumsToOneAndOrdered) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 10.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> q(4);
    for (auto& v : q) v = n(rng);
    const double beta = std::abs(n(rng));
    const auto p = softmax(q, beta);
    double total = 0.0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
    const auto best = argmax(q);
    for (double v : p) EXPECT_LE(v, p[best] + 1e-15);
  }
}

TEST(Belief, HandBayes) {
  const auto b = BeliefState::uniform(2);
  const std::vector<double> like{0.8, 0.2};
  const auto post = belief_update_F(b, seen(), like);
  EXPECT_NEAR(post.probs[0], 0.8, 1e-15);
  EXPECT_NEAR(post.probs[1], 0.2, 1e-15);
}

TEST(Belief, FlatLikelihoodKeepsPrior) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p{u(rng), u(rng), u(rng)};
    const double t = p[0] + p[1] + p[2];
    for (auto& v : p) v /= t;
    const std::vector<double> flat(3, 0.37);
    const auto post = belief_update_F(BeliefState::categorical(p), seen(), flat);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(post.probs[k], p[k], 1e-15);
  }
}

TEST(Belief, MaskedObservationIsNoOp) {
  const auto b = BeliefState::categorical({0.3, 0.7});
  const std::vector<double> like{1.0, 0.0};
  EXPECT_EQ(belief_update_F(b, Observation{}, like), b);
}

TEST(Belief, ZeroLikelihoodIsInconsistent) {
  const auto b = BeliefState::categorical({1.0, 0.0});
  const std::vector<double> like{0.0, 1.0};
  EXPECT_THROW(belief_update_F(b, seen(), like), InconsistencyError);
}

TEST(Belief, DepthZeroNeverRevised) {
  const auto b = BeliefState::categorical({0.3, 0.7}, 0);
  const std::vector<double> like{1.0, 0.1};
  EXPECT_EQ(belief_update_F(b, seen(), like), b);
  EXPECT_EQ(frequency_update(b, 0, 0.5), b);
}

TEST(Belief, HarmonicFrequencyIsRunningAverage) {
  auto b = BeliefState::uniform(2);
  const std::vector<std::size_t> seq{0, 0, 1, 0, 1, 1, 1, 0};
  std::size_t zeros = 0;
  for (std::size_t k = 0; k < seq.size(); ++k) {
    b = frequency_update(b, seq[k], 0.0);
    zeros += seq[k] == 0;
    EXPECT_NEAR(b.probs[0], double(zeros) / double(k + 1), 1e-15);
  }
}

TEST(Belief, ValidationRejectsBadDistribution) {
  EXPECT_THROW(validate_belief(BeliefState::categorical({0.5, 0.6})), UsageError);
  EXPECT_THROW(validate_belief(BeliefState::categorical({1.2, -0.2})), UsageError);
  EXPECT_NO_THROW(validate_belief(BeliefState::categorical({0.25, 0.75})));
}

TEST(Neural, ZeroDeltaIsFixedPoint) {
  const NeuralParams q{{0.3, -1.0}, 0.5};
  EXPECT_EQ(neural_update_G(q, {0.0, 1}), q);
}

TEST(Neural, HandTdStep) {
  NeuralParams q{{0.0, 0.0, 0.0, 0.0}, 0.5};
  const auto sig = td_error(q, 2, 0, 1, 1.0, 1, 0.9);
  EXPECT_DOUBLE_EQ(sig.delta, 1.0);
  EXPECT_EQ(neural_update_G(q, sig).values[1], 0.5);
}

TEST(Neural, RepeatedSignalGeometricResidual) {
  NeuralParams q{{0.0}, 0.1};
  for (int t = 1; t <= 60; ++t) {
    q = neural_update_G(q, td_error(q, 1, 0, 0, 1.0, 0, 0.0));
    EXPECT_NEAR(1.0 - q.values[0], std::pow(0.9, t), 1e-13);
  }
}

// ---------------------------------------------------------------------------

AgentModel fp_model() {
  AgentModel m;
  m.neural_rule = NeuralRule::none;
  m.policy_rule = PolicyRule::smooth_best_response;
  return m;
}

TEST(PolicyRefresh, UnchangedInputsUnchangedPolicy) {
  const auto g = matrix_game("prisoners_dilemma");
  Policy p;
  p.kind = PolicyKind::softmax_of_q;
  p.beta = 3.0;
  p.table = StochasticPolicy::uniform(1, 2);
  AgentModel m;
  const NeuralParams q{{0.4, 1.3}, 0.1};
  const auto b = BeliefState::uniform(2);
  const auto once = policy_refresh_H(p, q, b, m, g, 0);
  EXPECT_EQ(policy_refresh_H(once, q, b, m, g, 0), once);
}

TEST(PolicyRefresh, MatcherBestRespondsToHeadsBelief) {
  const auto g = matrix_game("matching_pennies");
  Policy p;
  p.beta = 10.0;
  p.table = StochasticPolicy::uniform(1, 2);
  const auto out = policy_refresh_H(p, NeuralParams{}, BeliefState::categorical({1.0, 0.0}), fp_model(), g, 0);
  EXPECT_GT(out.table(0, 0), 0.999);
}

TEST(PolicyRefresh, UniformBeliefGivesUniformPolicy) {
  const auto g = matrix_game("matching_pennies");
  Policy p;
  p.beta = 10.0;
  p.table = StochasticPolicy::uniform(1, 2);
  const auto out = policy_refresh_H(p, NeuralParams{}, BeliefState::uniform(2), fp_model(), g, 1);
  EXPECT_NEAR(out.table(0, 0), 0.5, 1e-15);
}

TEST(Phi, FixedPointLeavesAgentsUnchanged) {
  const auto g = matrix_game("prisoners_dilemma");
  std::vector<AgentModel> models(2);
  std::vector<MultilevelAgentState> agents(2);
  for (auto& m : models) {
    m.belief_rule = BeliefRule::none;
    m.neural_rule = NeuralRule::none;
    m.policy_rule = PolicyRule::fixed;
  }
  for (auto& a : agents) {
    a.belief = BeliefState::uniform(2);
    a.policy.table = StochasticPolicy::uniform(1, 2);
  }
  auto rng = RngStreams::from_seed(1, 2);
  const auto r = joint_step_Phi(g, models, agents, 0, rng);
  EXPECT_EQ(r.agents, agents);
}

TEST(Phi, QUpdatesOnlyAtVisitedEntry) {
  auto s = build_matrix_game("matching_pennies", 1.0, 0.5, LearnerKind::q_learner);
  auto rng = RngStreams::from_seed(3, 2);
  auto state = s->initial_state(rng.environment);
  const auto before = state;
  const auto rec = s->advance(state, 0, rng, {});
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t a = 0; a < 2; ++a) {
      if (a == rec.actions[i])
        EXPECT_NE(state.agents[i].theta.values[a], before.agents[i].theta.values[a]);
      else
        EXPECT_EQ(state.agents[i].theta.values[a], before.agents[i].theta.values[a]);
    }
  }
}

TEST(Phi, SameSeedSameResult) {
  const auto s = build_matrix_game("coordination", 2.0, 0.2, LearnerKind::q_learner);
  for (std::uint64_t seed : {1u, 99u}) {
    auto r1 = RngStreams::from_seed(seed, 2);
    auto r2 = RngStreams::from_seed(seed, 2);
    auto a = s->initial_state(r1.environment);
    auto b = s->initial_state(r2.environment);
    for (std::uint64_t t = 0; t < 50; ++t) {
      EXPECT_EQ(s->advance(a, t, r1, {}), s->advance(b, t, r2, {}));
      EXPECT_EQ(a, b);
    }
  }
}

TEST(Phi, ToyOneStep) {
  ToyCoAdaptScenario toy({0.2, 0.3, 0.9, 0.1});
  RngStreams rng;
  auto s = toy.initial_state(rng.environment);
  toy.advance(s, 0, rng, {});
  EXPECT_NEAR(s.agents[0].belief.mean[0], 0.58, 1e-15);
  EXPECT_NEAR(s.agents[1].belief.mean[0], 0.34, 1e-15);
}

TEST(Rng, StreamsAreStableUnderExtraDraws) {
  auto a = RngStreams::from_seed(7, 2);
  auto b = RngStreams::from_seed(7, 2);
  for (int k = 0; k < 10; ++k) b.agents[0]();
  EXPECT_EQ(a.environment(), b.environment());
  EXPECT_EQ(a.agents[1](), b.agents[1]());
  EXPECT_NE(derive_seed(7, 0), derive_seed(7, 1));
}

}  // namespace
}  // namespace mie
