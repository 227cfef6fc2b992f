#pragma once

// Deterministic randomness helpers. Everything here is fully specified by the
// C++ standard (mt19937_64) or implemented inline, so identical seeds give
// identical streams on every platform and toolchain. std::uniform_*_distribution
// and std::shuffle are implementation-defined and must not be used anywhere
// reproducibility matters.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace bpshift {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = kFnvOffset) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = kFnvOffset) {
    return fnv1a64(s.data(), s.size(), h);
}

// splitmix64 finalizer; good avalanche for seed derivation.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
    return mix64(base ^ mix64(salt));
}

inline std::uint64_t derive_seed(std::uint64_t base, const std::string& salt) {
    return derive_seed(base, fnv1a64(salt));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t base, std::uint64_t salt = 0) {
    return Rng(derive_seed(base, salt));
}

// Unbiased draw in [0, n) via rejection sampling.
inline std::uint64_t draw_below(Rng& g, std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = g();
    while (v >= limit) v = g();
    return v % n;
}

// Uniform double in [0, 1) with 53 random bits.
inline double draw_unit(Rng& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double draw_uniform(Rng& g, double lo, double hi) {
    return lo + (hi - lo) * draw_unit(g);
}

// Box-Muller; one value per call keeps the stream layout obvious.
inline double draw_normal(Rng& g) {
    double u1 = draw_unit(g);
    while (u1 <= 0.0) u1 = draw_unit(g);
    const double u2 = draw_unit(g);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

template <typename T>
void shuffle_vec(std::vector<T>& v, Rng& g) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(draw_below(g, i));
        std::swap(v[i - 1], v[j]);
    }
}

// k distinct indices from [0, n), in draw order.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& g) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::size_t> out;
    out.reserve(k);
    std::size_t remaining = n;
    for (std::size_t i = 0; i < k && remaining > 0; ++i) {
        const std::size_t j = static_cast<std::size_t>(draw_below(g, remaining));
        out.push_back(pool[j]);
        pool[j] = pool[remaining - 1];
        --remaining;
    }
    return out;
}

} // namespace bpshift
