#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace mtopt {

/// Generator used throughout. Every run owns its generators; nothing is global.
using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent stream seeds from one root seed.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based split: stream k of root seed s. Same (s, k) always yields the same generator.
inline Rng make_stream(std::uint64_t root_seed, std::uint64_t stream) {
  return Rng(splitmix64(splitmix64(root_seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL)));
}

// The distributions below are written out rather than taken from <random> so the
// sampled values are identical across standard library implementations.

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

/// Standard normal via Box-Muller (one value per call, second discarded).
inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Exponential(1), i.e. Gamma(1, 1).
inline double standard_exponential(Rng& rng) {
  return -std::log1p(-uniform01(rng));
}

/// Uniform integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  // Lemire-style rejection keeps the draw unbiased.
  const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % n;
}

/// Fisher-Yates shuffle driven by uniform_index.
template <typename Container>
void shuffle(Container& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

}  // namespace mtopt
