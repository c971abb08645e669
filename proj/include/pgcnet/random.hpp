#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>

namespace pgcnet {

using Rng = std::mt19937_64;

/// Deterministically derives an independent stream seed from a master seed and a stream index
/// (splitmix64 finalizer over the pair).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t z = master + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline Rng derive_stream(std::uint64_t master, std::uint64_t index) {
    return Rng(derive_seed(master, index));
}

/// Fills `out` with i.i.d. standard normal draws. The distribution object is local, so the
/// engine state alone determines the sequence.
template <typename T>
void fill_standard_normal(std::span<T> out, Rng& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    for (auto& v : out) v = static_cast<T>(n01(rng));
}

/// Fills `out` with independent +-1 signs.
template <typename T>
void fill_rademacher(std::span<T> out, Rng& rng) {
    for (auto& v : out) v = (rng() >> 63) ? T(1) : T(-1);
}

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& state);

}  // namespace pgcnet
