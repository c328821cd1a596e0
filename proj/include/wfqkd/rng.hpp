#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace wfqkd {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer. Used to turn (seed, tag, index) tuples into
/// well-separated substream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives a deterministic substream seed from a base seed and a path of
/// integers. Different paths give statistically independent streams.
constexpr std::uint64_t derive_seed(std::uint64_t base,
                                    std::initializer_list<std::uint64_t> path) noexcept {
    std::uint64_t h = splitmix64(base);
    for (auto p : path) h = splitmix64(h ^ splitmix64(p + 0x632be59bd9b4e019ULL));
    return h;
}

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
    return Rng{derive_seed(base, path)};
}

// Stream tags.
namespace stream {
inline constexpr std::uint64_t fiber_row = 1;
inline constexpr std::uint64_t output_plane = 2;
inline constexpr std::uint64_t ga_init = 3;
inline constexpr std::uint64_t ga_breed = 4;
inline constexpr std::uint64_t ga_eval = 5;
inline constexpr std::uint64_t qkd = 6;
} // namespace stream

} // namespace wfqkd
