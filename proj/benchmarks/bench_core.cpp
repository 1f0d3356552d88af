#include <benchmark/benchmark.h>

#include <random>

#include "mie/equilibrium.hpp"
#include "mie/estimation.hpp"
#include "mie/scenarios.hpp"
#include "mie/sim.hpp"

namespace {

using namespace mie;

RunConfig run(std::uint64_t horizon) {
  RunConfig rc;
  rc.seed = 1;
  rc.horizon = horizon;
  rc.snapshot_cadence = horizon;
  return rc;
}

void BM_MatrixGameRollout(benchmark::State& state) {
  const auto s = build_matrix_game("prisoners_dilemma", 10.0, 0.1, LearnerKind::q_learner);
  const auto T = std::uint64_t(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(rollout(*s, run(T)));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MatrixGameRollout)->Arg(1000)->Arg(10000);

void BM_HighwayRollout(benchmark::State& state) {
  const auto s = build_highway_merge({});
  for (auto _ : state) benchmark::DoNotOptimize(rollout(*s, run(2000)));
  state.SetItemsProcessed(state.iterations() * 2000);
}
BENCHMARK(BM_HighwayRollout);

void BM_Brgap(benchmark::State& state) {
  const auto game = highway_merge_game({});
  std::vector<StochasticPolicy> joint;
  for (std::size_t i = 0; i < game.num_agents(); ++i)
    joint.push_back(StochasticPolicy::uniform(game.num_states, game.actions_per_agent[i]));
  for (auto _ : state) benchmark::DoNotOptimize(brgap(game, joint, 0));
}
BENCHMARK(BM_Brgap);

void BM_KalmanFilter(benchmark::State& state) {
  const auto n = Eigen::Index(state.range(0));
  LinearGaussianModel m;
  m.transition = 0.9 * Eigen::MatrixXd::Identity(n, n);
  m.observation = Eigen::MatrixXd::Identity(n, n);
  m.process_noise = 0.1 * Eigen::MatrixXd::Identity(n, n);
  m.observation_noise = 0.5 * Eigen::MatrixXd::Identity(n, n);
  m.initial_mean = Eigen::VectorXd::Zero(n);
  m.initial_covariance = Eigen::MatrixXd::Identity(n, n);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise;
  std::vector<Eigen::VectorXd> ys(1000, Eigen::VectorXd(n));
  for (auto& y : ys)
    for (Eigen::Index k = 0; k < n; ++k) y(k) = noise(rng);
  for (auto _ : state) benchmark::DoNotOptimize(kalman_belief_filter(m, ys));
}
BENCHMARK(BM_KalmanFilter)->Arg(1)->Arg(8);

void BM_ToyBasin(benchmark::State& state) {
  ToyCoAdaptScenario toy({0.2, 0.3, 0.5, 0.5});
  const auto base = toy.state_at(0.5, 0.5);
  BasinOptions options;
  options.jobs = std::size_t(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(basin_map(toy, base, {{0, 0.0, 1.0, 40}, {1, 0.0, 1.0, 40}}, options));
}
BENCHMARK(BM_ToyBasin)->Arg(1)->Arg(4);

}  // namespace

BENCHMARK_MAIN();
