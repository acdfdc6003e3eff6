// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace cirforge {

// All seed-derived behaviour in the toolkit goes through the helpers below so
// that runs are reproducible across platforms and standard libraries.
// std::mt19937_64 output is pinned by the standard; std::shuffle and the
// <random> distributions are not, so they are never used on anything that
// reaches an artifact.

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = kFnvOffset) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t fnv1a64_u64(std::uint64_t v, std::uint64_t h = kFnvOffset) {
    for (int i = 0; i < 8; ++i) {
        h ^= static_cast<unsigned char>(v >> (8 * i));
        h *= kFnvPrime;
    }
    return h;
}

/// Hash of (seed, text), the draw function of the rule-based perturber.
inline std::uint64_t seeded_hash(std::uint64_t seed, std::string_view text) {
    return fnv1a64(text, fnv1a64_u64(seed));
}

/// Per-item seed: hash(run_seed, item id, attempt index). Retries and
/// parallel execution never perturb other items.
inline std::uint64_t item_seed(std::uint64_t run_seed, std::string_view item_id,
                               std::uint64_t attempt) {
    return fnv1a64_u64(attempt, fnv1a64(item_id, fnv1a64_u64(run_seed)));
}

/// Uniform draw in [0, n) by rejection sampling, exact and portable.
inline std::uint64_t draw_below(std::mt19937_64& rng, std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = std::mt19937_64::max() - std::mt19937_64::max() % n;
    std::uint64_t x = rng();
    while (x >= limit) x = rng();
    return x % n;
}

/// Uniform double in [0, 1) with 53 bits of randomness.
inline double draw_unit(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Fisher-Yates with portable draws; std::shuffle is implementation-defined.
template <typename T>
void deterministic_shuffle(std::vector<T>& items, std::mt19937_64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(draw_below(rng, i));
        std::swap(items[i - 1], items[j]);
    }
}

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

}  // namespace cirforge
