#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <vector>

namespace p2p {

/// Deterministic random stream. Streams are derived from a root seed plus a
/// tuple of tags (epoch, sample id, purpose...), so the draws for one sample
/// never depend on how many draws were made for another.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : Rng(std::vector<std::uint64_t>{seed}) {}

  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::vector<std::uint64_t> words{seed};
    words.insert(words.end(), tags.begin(), tags.end());
    return Rng(words);
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_));
  }

  double normal() {
    // Box-Muller on our own uniforms keeps the stream layout explicit.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  explicit Rng(const std::vector<std::uint64_t>& words) {
    std::vector<std::uint32_t> halves;
    for (auto w : words) {
      halves.push_back(static_cast<std::uint32_t>(w));
      halves.push_back(static_cast<std::uint32_t>(w >> 32));
    }
    std::seed_seq seq(halves.begin(), halves.end());
    engine_.seed(seq);
  }

  std::mt19937_64 engine_;
};

}  // namespace p2p
