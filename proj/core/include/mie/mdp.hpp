#pragma once

#include <cstddef>
#include <vector>

#include "mie/game.hpp"

namespace mie {

struct ValueIterationResult {
  std::vector<double> values;
  std::vector<std::size_t> greedy;
  std::size_t iterations = 0;
  double span_residual = 0.0;
};

/// Value iteration stopped on the span seminorm of successive differences.
/// Throws NumericalError if `max_iterations` is reached first.
ValueIterationResult value_iteration(const Mdp& mdp, double span_tolerance = 1e-10,
                                     std::size_t max_iterations = 100'000);

/// Exact V^pi by solving (I - gamma P_pi) V = r_pi.
std::vector<double> evaluate_policy(const Mdp& mdp, const StochasticPolicy& policy);

struct OptimalSolution {
  std::vector<double> values;
  std::vector<std::size_t> policy;
};

/// Value iteration followed by policy-iteration polishing, so the returned
/// values are the exact evaluation of an optimal deterministic policy.
OptimalSolution solve_optimal(const Mdp& mdp, double span_tolerance = 1e-10,
                              std::size_t max_iterations = 100'000);

/// Expected value of `values` under the MDP's initial distribution.
double initial_value(const Mdp& mdp, const std::vector<double>& values);

}  // namespace mie
