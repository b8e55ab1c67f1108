#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace gapcast {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for a named sub-stream, e.g. derive_seed(seed, {kEpochStream, epoch}).
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = mix64(seed);
    for (auto t : tags) {
        h = mix64(h ^ mix64(t + 0x632be59bd9b4e019ULL));
    }
    return h;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {}) {
    return Rng(derive_seed(seed, tags));
}

} // namespace gapcast
