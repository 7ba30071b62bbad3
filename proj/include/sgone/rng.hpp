#pragma once

#include <cstdint>
#include <random>

namespace sgone {

// splitmix64; used to derive independent engine seeds from one user seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream));
}

// Uniform in [0,1). Hand-rolled mapping: std::uniform_real_distribution is
// not bit-specified across library implementations, mt19937_64 itself is.
inline double uniform_real(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_range(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform_real(rng);
}

// Unbiased integer in [0, n). Rejection sampling on the top of the range.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi_inclusive) {
  return lo + static_cast<int>(
                  uniform_below(rng, static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
}

}  // namespace sgone
