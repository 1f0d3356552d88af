#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace mie {

using Rng = std::mt19937_64;

/// One step of the splitmix64 sequence. Used only to derive independent
/// seeds from a root seed; never as the simulation generator itself.
std::uint64_t splitmix64(std::uint64_t& state);

/// Seed for substream `stream` of `root`. Distinct streams of the same root
/// are statistically independent and never shift when another stream draws.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream);

double uniform01(Rng& rng);

/// Sample an index from a (not necessarily normalized) nonnegative weight
/// vector. Zero-weight entries are never returned.
std::size_t sample_index(std::span<const double> weights, Rng& rng);

/// Independent generators for one rollout.
///
/// Stream layout for root seed r:
///   stream 0         environment transitions and scenario noise
///   stream 1 + i     action sampling of agent i
struct RngStreams {
  Rng environment;
  std::vector<Rng> agents;

  static RngStreams from_seed(std::uint64_t root, std::size_t num_agents);
};

}  // namespace mie
