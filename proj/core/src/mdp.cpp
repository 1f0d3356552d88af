#include "mie/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "mie/errors.hpp"

namespace mie {

namespace {

double q_value(const Mdp& mdp, std::size_t s, std::size_t a, const std::vector<double>& v) {
  double q = mdp.reward_of(s, a);
  const auto row = mdp.transition_row(s, a);
  double future = 0.0;
  for (std::size_t next = 0; next < mdp.num_states; ++next) future += row[next] * v[next];
  return q + mdp.discount * future;
}

std::vector<std::size_t> greedy_policy(const Mdp& mdp, const std::vector<double>& v) {
  std::vector<std::size_t> greedy(mdp.num_states, 0);
  for (std::size_t s = 0; s < mdp.num_states; ++s) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < mdp.num_actions; ++a) {
      const double q = q_value(mdp, s, a, v);
      if (q > best) {
        best = q;
        greedy[s] = a;
      }
    }
  }
  return greedy;
}

}  // namespace

ValueIterationResult value_iteration(const Mdp& mdp, double span_tolerance, std::size_t max_iterations) {
  ValueIterationResult result;
  std::vector<double> v(mdp.num_states, 0.0);
  std::vector<double> next(mdp.num_states, 0.0);
  for (std::size_t it = 1; it <= max_iterations; ++it) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < mdp.num_states; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < mdp.num_actions; ++a) best = std::max(best, q_value(mdp, s, a, v));
      next[s] = best;
      lo = std::min(lo, best - v[s]);
      hi = std::max(hi, best - v[s]);
    }
    v.swap(next);
    if (!std::isfinite(hi) || !std::isfinite(lo)) throw NumericalError("value iteration produced non-finite values");
    result.iterations = it;
    result.span_residual = hi - lo;
    if (result.span_residual < span_tolerance) {
      result.values = std::move(v);
      result.greedy = greedy_policy(mdp, result.values);
      return result;
    }
  }
  throw NumericalError("value iteration did not reach span residual " + std::to_string(span_tolerance) + " within " +
                       std::to_string(max_iterations) + " iterations");
}

std::vector<double> evaluate_policy(const Mdp& mdp, const StochasticPolicy& policy) {
  if (policy.num_states != mdp.num_states || policy.num_actions != mdp.num_actions)
    throw UsageError("evaluate_policy: policy shape does not match the MDP");
  const auto S = static_cast<Eigen::Index>(mdp.num_states);
  Eigen::MatrixXd system = Eigen::MatrixXd::Identity(S, S);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(S);
  for (std::size_t s = 0; s < mdp.num_states; ++s) {
    for (std::size_t a = 0; a < mdp.num_actions; ++a) {
      const double p = policy(s, a);
      if (p == 0.0) continue;
      rhs(Eigen::Index(s)) += p * mdp.reward_of(s, a);
      const auto row = mdp.transition_row(s, a);
      for (std::size_t next = 0; next < mdp.num_states; ++next)
        system(Eigen::Index(s), Eigen::Index(next)) -= mdp.discount * p * row[next];
    }
  }
  const Eigen::VectorXd v = system.partialPivLu().solve(rhs);
  if (!v.allFinite()) throw NumericalError("policy evaluation produced non-finite values");
  return {v.data(), v.data() + v.size()};
}

OptimalSolution solve_optimal(const Mdp& mdp, double span_tolerance, std::size_t max_iterations) {
  const auto vi = value_iteration(mdp, span_tolerance, max_iterations);
  OptimalSolution out{{}, vi.greedy};
  // Policy iteration from the value-iteration greedy policy. Improvement
  // requires a strict gain so that ties never cycle.
  for (std::size_t round = 0; round < 1000; ++round) {
    out.values = evaluate_policy(mdp, StochasticPolicy::deterministic(mdp.num_states, mdp.num_actions, out.policy));
    bool changed = false;
    for (std::size_t s = 0; s < mdp.num_states; ++s) {
      const double current = q_value(mdp, s, out.policy[s], out.values);
      const double scale = std::max(1.0, std::abs(current));
      for (std::size_t a = 0; a < mdp.num_actions; ++a) {
        if (q_value(mdp, s, a, out.values) > current + 1e-13 * scale) {
          out.policy[s] = a;
          changed = true;
          break;
        }
      }
    }
    if (!changed) return out;
  }
  throw NumericalError("policy iteration did not stabilize");
}

double initial_value(const Mdp& mdp, const std::vector<double>& values) {
  double v = 0.0;
  for (std::size_t s = 0; s < mdp.num_states; ++s) v += mdp.initial_dist[s] * values[s];
  return v;
}

}  // namespace mie
