#pragma once

#include <cstdint>
#include <vector>

namespace dci {

/// SplitMix64 (Steele, Lea, Flood 2014). Used for every random draw in the
/// project so that initialization, shuffles and synthetic data are identical
/// across platforms and easy to reproduce in other languages:
///
///   state += 0x9E3779B97F4A7C15
///   z = state
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   return z ^ (z >> 31)
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) from the top 53 bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform double in the open interval (-s, s): u = (2k + 1) / 2^52 - 1
  /// with k the top 52 bits, so |u| <= 1 - 2^-52.
  double symmetric(double s) {
    double k = static_cast<double>(next() >> 12);
    double u = (2.0 * k + 1.0) * 0x1.0p-52 - 1.0;
    return u * s;
  }

  /// Integer in [0, n) by modulo reduction (bias is below 2^-40 for n < 2^24).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next() % n; }

 private:
  std::uint64_t state_;
};

/// In-place Fisher-Yates shuffle driven by SplitMix64: for i from n-1 down to
/// 1, swap element i with element below(i + 1).
template <class T>
void shuffle(std::vector<T>& items, SplitMix64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace dci
