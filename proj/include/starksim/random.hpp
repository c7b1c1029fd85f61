#pragma once

#include <cstdint>
#include <random>

namespace starksim {

// SplitMix64 finaliser.
constexpr std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Seed of the independent stream `index` under `master`:
// splitmix64(master ^ splitmix64(index)). Every stochastic work unit (scan
// point, voltage, ion, repetition) draws from its own derived stream, so
// results do not depend on scheduling.
constexpr std::uint64_t mix_seed(std::uint64_t master, std::uint64_t index) {
    return splitmix64(master ^ splitmix64(index));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

inline constexpr std::uint64_t kDefaultMasterSeed = 0xE531536ULL;

} // namespace starksim
