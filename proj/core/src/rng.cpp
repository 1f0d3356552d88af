#include "mie/rng.hpp"

#include "mie/errors.hpp"

namespace mie {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  std::uint64_t state = root;
  const std::uint64_t a = splitmix64(state);
  state = a ^ (stream * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL);
  splitmix64(state);
  return splitmix64(state);
}

double uniform01(Rng& rng) {
  // 53 random mantissa bits; identical on every platform for a given engine state.
  return double(rng() >> 11) * 0x1.0p-53;
}

std::size_t sample_index(std::span<const double> weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw UsageError("sample_index: negative or NaN weight");
    total += w;
  }
  if (!(total > 0.0)) throw UsageError("sample_index: weights sum to zero");
  const double u = uniform01(rng) * total;
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k] <= 0.0) continue;
    cumulative += weights[k];
    last_positive = k;
    if (u < cumulative) return k;
  }
  return last_positive;
}

RngStreams RngStreams::from_seed(std::uint64_t root, std::size_t num_agents) {
  RngStreams streams{Rng(derive_seed(root, 0)), {}};
  streams.agents.reserve(num_agents);
  for (std::size_t i = 0; i < num_agents; ++i) streams.agents.emplace_back(derive_seed(root, i + 1));
  return streams;
}

}  // namespace mie
