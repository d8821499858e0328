#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dla {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream for (seed, index) pairs. Attacks use one stream per
// sample so serial and chunk-parallel runs produce identical bytes.
inline std::mt19937 stream_rng(std::uint64_t seed, std::uint64_t index) {
  return std::mt19937(static_cast<std::uint32_t>(splitmix64(seed * 0x9e3779b97f4a7c15ULL + index) >> 16));
}

// Uniform in [0,1). Written out explicitly so values depend only on the
// mt19937 output sequence, not on library distribution internals.
inline float uniform_float(std::mt19937& rng) {
  return static_cast<float>(rng() >> 8) * (1.0f / 16777216.0f);
}

// Uniform in [lo, hi).
inline float uniform_float(std::mt19937& rng, float lo, float hi) {
  return lo + (hi - lo) * uniform_float(rng);
}

// Standard normal via Box-Muller on the explicit uniform.
inline float normal_float(std::mt19937& rng) {
  float u1 = uniform_float(rng);
  float u2 = uniform_float(rng);
  if (u1 < 1e-12f) u1 = 1e-12f;
  return std::sqrt(-2.0f * std::log(u1)) * std::cos(6.2831853071795865f * u2);
}

}  // namespace dla
