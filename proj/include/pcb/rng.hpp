#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace pcb {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent streams from a root seed.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> salts) {
  std::uint64_t s = mix64(root);
  for (auto v : salts) s = mix64(s ^ mix64(v + 0x632BE59BD9B4E019ULL));
  return s;
}

inline Rng make_rng(std::uint64_t root, std::initializer_list<std::uint64_t> salts = {}) {
  return Rng(derive_seed(root, salts));
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace pcb
