#pragma once

// Reproducible random streams.
//
// Every stochastic routine in the library draws from a Xoshiro256** generator
// whose state is derived from a master seed plus an index path through
// SplitMix64.  The algorithms are fixed and the floating-point conversions
// below are done by hand, so results are bit-identical across platforms and
// standard-library implementations.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace brwlab {

/// SplitMix64 finalizer.  Used for seeding and stream derivation.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives a child seed from a parent seed and an ordered list of keys.
/// derive(s, {a, b}) == derive(derive(s, {a}), {b}).
constexpr std::uint64_t derive_seed(std::uint64_t seed,
                                    std::initializer_list<std::uint64_t> keys) noexcept {
  for (auto k : keys) seed = mix64(seed ^ mix64(k + 0x632be59bd9b4e019ULL));
  return seed;
}

/// Hashes a signed key so that negative indices get distinct streams.
constexpr std::uint64_t key_of(std::int64_t v) noexcept {
  return static_cast<std::uint64_t>(v);
}

/// Maps a 64-bit word to a double in [0, 1) using the top 53 bits.
constexpr double to_unit(std::uint64_t x) noexcept {
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) noexcept { reseed(seed); }

  void reseed(std::uint64_t seed) noexcept {
    std::uint64_t z = seed;
    for (auto& word : s_) {
      z += 0x9e3779b97f4a7c15ULL;
      word = mix64(z);
    }
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform on [0, 1).
  double uniform() noexcept { return to_unit((*this)()); }

  /// Exp(rate) by inversion; rate must be positive.
  double exponential(double rate) noexcept {
    return -std::log1p(-uniform()) / rate;
  }

  /// Uniform integer in [0, n), n > 0.  Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t n) noexcept {
    std::uint64_t x = (*this)();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        x = (*this)();
        m = static_cast<__uint128_t>(x) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4];
};

/// Stream for (master seed, replica index): the per-replica contract.
inline Rng replica_stream(std::uint64_t master, std::uint64_t replica) noexcept {
  return Rng(derive_seed(master, {replica}));
}

}  // namespace brwlab
