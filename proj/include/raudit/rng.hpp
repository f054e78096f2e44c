#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>

namespace raudit {

/// SplitMix64 finalizer (Steele, Lea & Flood 2014). Bijective on 64 bits.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Stable seed derivation: seed for work item `index` under `master`.
/// Identical on every platform; used for per-resample and per-replication seeds.
constexpr std::uint64_t stable_hash(std::uint64_t master, std::uint64_t index) noexcept {
  return mix64(mix64(master ^ 0x6A09E667F3BCC909ULL) + mix64(index + 0x9E3779B97F4A7C15ULL));
}

/// Counter-based generator: output k is mix64(key + k * golden_gamma), i.e. SplitMix64
/// run from state `key`. Every draw is a pure function of (key, counter), so streams are
/// bit-reproducible across platforms and compilers.
///
/// Integer draws (uniform_index, shuffles) use only integer arithmetic. Real-valued draws
/// go through std::log / std::cos and inherit libm's last-ulp behaviour.
class CounterRng {
public:
  using result_type = std::uint64_t;

  explicit constexpr CounterRng(std::uint64_t key) noexcept : key_(key) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }

  constexpr result_type operator()() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform integer in [0, bound). Lemire's multiply-shift with rejection; exact.
  std::uint64_t uniform_index(std::uint64_t bound) noexcept {
    if (bound <= 1) return 0;
    unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (low < threshold) {
        m = static_cast<unsigned __int128>((*this)()) * bound;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; caches the second variate.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 6.283185307179586 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  bool bernoulli(double p) noexcept { return uniform01() < p; }

  /// Fisher-Yates shuffle; every permutation equally likely.
  template <class T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace raudit
