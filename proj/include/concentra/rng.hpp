#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace concentra {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Seed of the named sub-stream `name` (optionally indexed) derived from the
/// master seed. Streams never depend on the order in which they are created.
inline std::uint64_t stream_seed(std::uint64_t master, std::string_view name,
                                 std::uint64_t index = 0) {
  return detail::splitmix64(detail::splitmix64(master ^ detail::fnv1a(name)) + index);
}

using Rng = std::mt19937_64;

inline Rng make_stream(std::uint64_t master, std::string_view name, std::uint64_t index = 0) {
  return Rng(stream_seed(master, name, index));
}

}  // namespace concentra
