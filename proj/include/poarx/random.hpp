#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace poarx {

/// Random stream used throughout the library. Caller-owned; never shared
/// implicitly between workers.
using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for sub-stream `index` of a run seeded with `seed`. Deterministic, so
/// replicate i is reproducible no matter which worker runs it.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng make_stream(std::uint64_t seed, std::uint64_t index) {
  return Rng{derive_seed(seed, index)};
}

/// Uniform draw on [0, 1) with 53 random bits. Used instead of
/// std::uniform_real_distribution so sequences are identical across
/// standard library implementations.
template <class URBG>
double uniform01(URBG& rng) {
  static_assert(URBG::max() - URBG::min() == ~std::uint64_t{0}, "64-bit generator required");
  return static_cast<double>((rng() - URBG::min()) >> 11) * 0x1.0p-53;
}

/// Uniform draw on the open interval (0, 1).
template <class URBG>
double uniform_open01(URBG& rng) {
  double u = 0.0;
  do {
    u = uniform01(rng);
  } while (u == 0.0);
  return u;
}

template <class URBG>
double standard_exponential(URBG& rng) {
  return -std::log(uniform_open01(rng));
}

}  // namespace poarx
