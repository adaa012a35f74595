#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace pruneood {

using Rng = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t hash_name(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Independent stream for (seed, name, index). Streams for different names or
// indices do not depend on the order in which they are created.
inline Rng make_stream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0) {
  const std::uint64_t s = splitmix64(splitmix64(seed ^ hash_name(name)) + index);
  return Rng(s);
}

// Uniform double in the open interval (0, 1).
inline double uniform_open(Rng& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  double u = 0.0;
  do {
    u = dist(rng);
  } while (u <= 0.0);
  return u;
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace pruneood
