#pragma once

#include <cstdint>
#include <limits>

namespace bsim {

/// Named streams used when deriving child seeds from a master seed.
enum class Stream : std::uint64_t {
  environment = 1,
  labels,
  holdout,
  sampler,
  membership,
  init,
  shuffle,
  dropout,
  draws,
  policy,
  user_order,
  warm_start,
  run,
  sweep,
};

/// Finalizer from SplitMix64; a bijective 64-bit mix.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Splittable seed derivation: every (base, parts...) tuple maps to an
/// independent-looking 64-bit seed.
template <class... Parts>
constexpr std::uint64_t derive_seed(std::uint64_t base, Parts... parts) noexcept {
  std::uint64_t h = mix64(base);
  ((h = mix64(h ^ mix64(static_cast<std::uint64_t>(parts) + 0xD1B54A32D192ED03ULL))), ...);
  return h;
}

/// SplitMix64 generator. Cheap to construct, so one instance per dropout
/// draw or per membership decision is affordable.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  constexpr double uniform() noexcept {
    return static_cast<double>(operator()() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n); n must be positive.
  constexpr std::uint64_t below(std::uint64_t n) noexcept {
    // Lemire's multiply-shift; the tiny modulo bias is irrelevant at these n.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(operator()()) * n) >> 64);
  }

 private:
  std::uint64_t state_;
};

}  // namespace bsim
