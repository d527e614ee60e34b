#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace smalldata {

using Rng = std::mt19937_64;

// SplitMix64 finalizer. Bijective on 64-bit words, so distinct inputs give
// distinct derived seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for an independent stream identified by `stream` under `base`.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
    return mix64(base ^ mix64(stream));
}

/// Uniform integer in [0, n). Rejection sampling keeps it unbiased and, unlike
/// std::uniform_int_distribution, identical across standard libraries.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    if (n <= 1) {
        return 0;
    }
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = Rng::max() - (Rng::max() % bound);
    std::uint64_t draw = rng();
    while (draw >= limit) {
        draw = rng();
    }
    return static_cast<std::size_t>(draw % bound);
}

/// Uniform integer in the closed range [lo, hi].
inline int uniform_int(Rng& rng, int lo, int hi) {
    return lo + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(hi - lo) + 1));
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::size_t j = uniform_index(rng, i);
        using std::swap;
        swap(items[i - 1], items[j]);
    }
}

} // namespace smalldata
