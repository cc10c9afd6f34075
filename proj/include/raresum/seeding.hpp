#pragma once

// Stable per-replicate seeds: seed_base XOR H(sweep value, scheme, replicate index), where H
// folds the three words through splitmix64. Every replicate owns its own generator, so results
// do not depend on how replicates are spread over threads.

#include <bit>
#include <cstdint>

namespace raresum {

enum class SchemeCode : std::uint64_t { adaptive = 1, tilted_iid = 2, naive = 3 };

/// Replicate index reserved for the mean chain of a run.
inline constexpr std::uint64_t kChainStream = ~std::uint64_t{0};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct SeedPlan {
  std::uint64_t base = 0;
  double sweep_value = 0.0;

  std::uint64_t replicate(SchemeCode scheme, std::uint64_t index) const {
    std::uint64_t h = splitmix64(std::bit_cast<std::uint64_t>(sweep_value));
    h = splitmix64(h ^ static_cast<std::uint64_t>(scheme));
    h = splitmix64(h ^ index);
    return base ^ h;
  }
};

}  // namespace raresum
