#pragma once

// Seeded random helpers. The engine is std::mt19937_64 (fully specified by the
// standard); the distributions below are written out by hand because the
// std:: distributions are implementation-defined and would break
// cross-toolchain reproducibility of datasets.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace forestvol {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Child seed from a master seed and a sequence of stream identifiers,
/// e.g. derive_seed(master, fold, epoch).
template <typename... Ids>
constexpr std::uint64_t derive_seed(std::uint64_t master, Ids... ids) noexcept {
    std::uint64_t s = mix_seed(master);
    ((s = mix_seed(s ^ static_cast<std::uint64_t>(ids))), ...);
    return s;
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

/// Unbiased integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: empty range");
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    std::uint64_t r;
    do {
        r = rng();
    } while (r >= limit);
    return r % n;
}

/// Inclusive integer range [lo, hi].
inline int uniform_int(Rng& rng, int lo, int hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: hi < lo");
    return lo + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo) + 1));
}

/// Standard normal via Box-Muller (one variate per call, no cached state).
inline double standard_normal(Rng& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline std::string rng_state(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

inline Rng rng_from_state(const std::string& state) {
    Rng rng;
    std::istringstream is(state);
    is >> rng;
    if (!is) throw std::invalid_argument("rng_from_state: malformed engine state");
    return rng;
}

}  // namespace forestvol
