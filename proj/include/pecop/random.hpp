// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace pecop {

using Rng = std::mt19937_64;

/// 64-bit FNV-1a.
constexpr uint64_t fnv1a64(std::string_view bytes, uint64_t hash = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

/// splitmix64 finalizer; used to derive independent sub-seeds.
constexpr uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t a, std::string_view tag) { return mix_seed(a, fnv1a64(tag)); }

template <typename... Rest>
uint64_t mix_seed(uint64_t a, uint64_t b, Rest... rest) {
  return mix_seed(mix_seed(a, b), rest...);
}

}  // namespace pecop
