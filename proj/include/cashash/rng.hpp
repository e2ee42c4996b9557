#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace cashash {

// All randomness in the library flows through the helpers below so that
// generated hyperplanes, RANSAC samples and test fixtures are reproducible
// from a single 64-bit seed. The raw stream is std::mt19937_64 (a fully
// specified, versioned generator); the distributions are implemented here
// instead of <random> because the standard does not pin down the output of
// std::normal_distribution / std::uniform_int_distribution across vendors.

// splitmix64 finalizer, used to derive independent stream seeds from
// (seed, stream, index) tuples.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix64(std::uint64_t seed, std::uint64_t a) {
    return mix64(seed ^ mix64(a));
}

inline std::uint64_t mix64(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return mix64(mix64(seed ^ mix64(a)) ^ mix64(b ^ 0xd6e8feb86659fd93ULL));
}

// Uniform double in [0, 1), 53-bit resolution.
inline double uniform_unit(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Unbiased uniform integer in [0, bound) by rejection.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        const std::uint64_t x = rng();
        if (x >= threshold) return x % bound;
    }
}

// Standard normal via Box-Muller. Stateless between calls: every call
// consumes exactly two generator words and returns one variate, so streams
// stay aligned regardless of how many draws a caller makes.
inline double standard_normal(std::mt19937_64& rng) {
    const double u1 = 1.0 - uniform_unit(rng);  // (0, 1]
    const double u2 = uniform_unit(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

}  // namespace cashash
