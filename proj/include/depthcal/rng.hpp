#pragma once

#include <cstdint>

namespace depthcal {

/// SplitMix64 generator. The constants and the double mapping are part of
/// the scene file contract: another implementation that follows the README
/// "RNG constants" section reproduces every synthetic scene
/// bit-for-bit.
class SplitMix64 {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
  static constexpr std::uint64_t kMix1 = 0xBF58476D1CE4E5B9ULL;
  static constexpr std::uint64_t kMix2 = 0x94D049BB133111EBULL;

  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    state_ += kGamma;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * kMix1;
    z = (z ^ (z >> 27)) * kMix2;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) from the top 53 bits.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    const auto k = static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
    return k < n ? k : n - 1;
  }

  /// Independent child stream; used so adding draws to one part of a
  /// generator does not shift every later part.
  SplitMix64 fork() noexcept { return SplitMix64(next()); }

 private:
  std::uint64_t state_;
};

}  // namespace depthcal
