#pragma once

// Independent reference implementations used as test oracles. None of them
// call into the library's solvers.

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "mie/game.hpp"

namespace mie::oracle {

inline TabularMarkovGame random_game(std::mt19937_64& rng, std::size_t states, std::vector<std::size_t> actions,
                                     double discount) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto g = TabularMarkovGame::zeros(states, actions, discount);
  const std::size_t J = g.num_joint_actions();
  for (std::size_t s = 0; s < states; ++s) {
    for (std::size_t j = 0; j < J; ++j) {
      double total = 0.0;
      for (std::size_t n = 0; n < states; ++n) total += g.probability(s, j, n) = unit(rng) + 0.01;
      for (std::size_t n = 0; n < states; ++n) g.probability(s, j, n) /= total;
      for (std::size_t i = 0; i < actions.size(); ++i) g.reward(s, j, i) = 2.0 * unit(rng) - 1.0;
    }
  }
  double total = 0.0;
  for (std::size_t s = 0; s < states; ++s) total += g.initial_dist[s] = unit(rng) + 0.1;
  for (auto& p : g.initial_dist) p /= total;
  return g;
}

inline StochasticPolicy random_policy(std::mt19937_64& rng, std::size_t states, std::size_t actions) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto p = StochasticPolicy::uniform(states, actions);
  for (std::size_t s = 0; s < states; ++s) {
    double total = 0.0;
    for (std::size_t a = 0; a < actions; ++a) total += p(s, a) = unit(rng);
    for (std::size_t a = 0; a < actions; ++a) p(s, a) /= total;
  }
  return p;
}

// Gaussian elimination with partial pivoting on a dense row-major system.
inline std::vector<double> solve_dense(std::vector<double> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t pivot = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r * n + c]) > std::abs(a[pivot * n + c])) pivot = r;
    for (std::size_t k = 0; k < n; ++k) std::swap(a[c * n + k], a[pivot * n + k]);
    std::swap(b[c], b[pivot]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r * n + c] / a[c * n + c];
      for (std::size_t k = c; k < n; ++k) a[r * n + k] -= f * a[c * n + k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t r = n; r-- > 0;) {
    double acc = b[r];
    for (std::size_t k = r + 1; k < n; ++k) acc -= a[r * n + k] * x[k];
    x[r] = acc / a[r * n + r];
  }
  return x;
}

// Value of agent i when every agent follows `joint`, from the raw tensors.
inline double joint_value(const TabularMarkovGame& g, const std::vector<StochasticPolicy>& joint, std::size_t i) {
  const std::size_t S = g.num_states;
  const std::size_t J = g.num_joint_actions();
  std::vector<double> a(S * S, 0.0);
  std::vector<double> r(S, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    a[s * S + s] = 1.0;
    for (std::size_t j = 0; j < J; ++j) {
      const auto acts = g.joint_action(j);
      double w = 1.0;
      for (std::size_t k = 0; k < acts.size(); ++k) w *= joint[k](s, acts[k]);
      r[s] += w * g.reward(s, j, i);
      for (std::size_t n = 0; n < S; ++n) a[s * S + n] -= g.discount * w * g.probability(s, j, n);
    }
  }
  const auto v = solve_dense(a, r);
  double out = 0.0;
  for (std::size_t s = 0; s < S; ++s) out += g.initial_dist[s] * v[s];
  return out;
}

// max over deterministic stationary deviations of agent i minus its current value.
inline double brute_force_brgap(const TabularMarkovGame& g, const std::vector<StochasticPolicy>& joint, std::size_t i) {
  const std::size_t S = g.num_states;
  const std::size_t A = g.actions_per_agent[i];
  std::vector<std::size_t> choice(S, 0);
  double best = -INFINITY;
  for (;;) {
    auto deviated = joint;
    deviated[i] = StochasticPolicy::deterministic(S, A, choice);
    best = std::max(best, joint_value(g, deviated, i));
    std::size_t k = 0;
    while (k < S && ++choice[k] == A) choice[k++] = 0;
    if (k == S) break;
  }
  return best - joint_value(g, joint, i);
}

// Textbook covariance-form Kalman filter on plain vectors, scalar state.
struct ScalarKalman {
  double a, h, q, r, mean, var;
  std::vector<double> means, vars, gains;
  void run(const std::vector<double>& ys) {
    for (double y : ys) {
      const double pm = a * mean;
      const double pv = a * var * a + q;
      const double k = pv * h / (h * pv * h + r);
      mean = pm + k * (y - h * pm);
      var = (1.0 - k * h) * pv;
      means.push_back(mean);
      vars.push_back(var);
      gains.push_back(k);
    }
  }
};

}  // namespace mie::oracle
