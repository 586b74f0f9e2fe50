#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace btcxr {

// SplitMix64. Every seeded stream in the toolkit is built on this generator
// so results do not depend on the platform's <random> implementation.
//
//   state += 0x9E3779B97F4A7C15
//   z = state
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   return z ^ (z >> 31)
class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 bits of resolution.
  constexpr double uniform() noexcept {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  constexpr double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform();
  }

  /// Uniform integer in [0, n). Plain modulo reduction; n must be > 0.
  constexpr std::uint64_t below(std::uint64_t n) noexcept { return next() % n; }

  /// Standard normal via the cosine branch of Box-Muller.
  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sigma) noexcept { return mean + sigma * normal(); }

 private:
  std::uint64_t state_;
};

/// Seed for sub-stream `index` of `seed`: one SplitMix64 output of the
/// index, xor'd into the seed, pushed through one more SplitMix64 step.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  SplitMix64 a(index);
  SplitMix64 b(seed ^ a.next());
  return b.next();
}

}  // namespace btcxr
