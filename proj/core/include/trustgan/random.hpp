#pragma once

#include <cstdint>
#include <random>

namespace trustgan {

using Rng = std::mt19937_64;

/// Independent random streams used by a training run. Each stream is seeded
/// from the run seed so that consuming one never shifts another.
enum class Stream : std::uint64_t {
    target_init = 1,
    generator_init = 2,
    shuffle = 3,
    dropout = 4,
    skip = 5,
    attack_seeds = 6,
    replay = 7,
    data = 8,
    mc_dropout = 9,
    export_attacks = 10,
};

/// splitmix64 finalizer over (seed, stream).
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, Stream stream) {
    return Rng(mix_seed(seed, static_cast<std::uint64_t>(stream)));
}

/// Uniform draw in [0, 1) with 53 bits of resolution.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace trustgan
