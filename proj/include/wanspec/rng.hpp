#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace wanspec {

// Deterministic draws on top of std::mt19937_64. The engine itself is fully
// specified by the standard, but std::uniform_*_distribution is not, so the
// mappings from raw 64-bit output to doubles/ranges live here. Identical
// seeds must yield identical streams on every platform.

/// Uniform double in [0, 1) with 53 bits of precision.
inline double uniform_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n). n must be > 0.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  // Lemire's multiply-shift with rejection of the biased zone.
  std::uint64_t x = rng();
  __uint128_t m = static_cast<__uint128_t>(x) * n;
  auto lo = static_cast<std::uint64_t>(m);
  if (lo < n) {
    std::uint64_t threshold = (0 - n) % n;
    while (lo < threshold) {
      x = rng();
      m = static_cast<__uint128_t>(x) * n;
      lo = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

/// Exponential draw with the given mean, floored away from exact zero.
inline double exponential(std::mt19937_64& rng, double mean) {
  double u = uniform_unit(rng);
  double v = -mean * std::log(1.0 - u);
  return v > 1e-12 ? v : 1e-12;
}

/// Uniform integer in [-spread, +spread].
inline std::int64_t uniform_jitter(std::mt19937_64& rng, std::int64_t spread) {
  if (spread <= 0) return 0;
  auto span = static_cast<std::uint64_t>(2 * spread + 1);
  return static_cast<std::int64_t>(uniform_below(rng, span)) - spread;
}

}  // namespace wanspec
