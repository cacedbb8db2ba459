#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace noisylab {

using Rng = std::mt19937_64;

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

/// Seed of an independent stream: splitmix64(seed XOR fnv1a(tag)).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  return detail::splitmix64(seed ^ detail::fnv1a(tag));
}

/// Seed of a numbered substream, e.g. (augment seed, epoch, sample index).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return detail::splitmix64(detail::splitmix64(seed ^ detail::splitmix64(a)) ^ b);
}

}  // namespace noisylab
