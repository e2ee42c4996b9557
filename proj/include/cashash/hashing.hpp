#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "cashash/feature_io.hpp"

namespace cashash {

inline constexpr int kMaxReduceRounds = 7;  // log2(kDescriptorDim)
inline constexpr int kDefaultReduceRounds = 3;

// Inner product of two 128-component vectors, computed as a pairwise (tree)
// reduction for the first (7 - tail_rounds) halving rounds followed by a
// sequential accumulation over the remaining 2^tail_rounds partial sums.
// tail_rounds trades tree depth against the serial tail; every setting
// returns the same value up to summation-order rounding, and results are
// bit-reproducible for a fixed setting.
template <typename T>
T reduce_dot(std::span<const T> a, std::span<const T> b, int tail_rounds = kDefaultReduceRounds) {
    if (a.size() != kDescriptorDim || b.size() != kDescriptorDim)
        throw std::invalid_argument("reduce_dot expects 128-component vectors");
    if (tail_rounds < 0 || tail_rounds > kMaxReduceRounds)
        throw std::invalid_argument("reduce_dot tail rounds out of range 0..7");

    std::array<T, kDescriptorDim> sums;
    for (std::size_t i = 0; i < kDescriptorDim; ++i) sums[i] = a[i] * b[i];

    std::size_t width = kDescriptorDim;
    const auto tail_width = static_cast<std::size_t>(1) << tail_rounds;
    while (width > tail_width) {
        width /= 2;
        for (std::size_t i = 0; i < width; ++i) sums[i] += sums[i + width];
    }
    T acc = sums[0];
    for (std::size_t i = 1; i < width; ++i) acc += sums[i];
    return acc;
}

struct FamilyParams {
    std::uint32_t short_bits = 8;    // m, bits per lookup code, 1..32
    std::uint32_t long_bits = 128;   // n, bits per ranking code, m < n <= 128
    std::uint32_t table_count = 6;   // L, number of lookup tables
    std::uint64_t seed = 1;

    friend bool operator==(const FamilyParams&, const FamilyParams&) = default;
};

void validate(const FamilyParams& params);

using Hyperplane = std::array<double, kDescriptorDim>;

// Seeded family of random hyperplanes: table_count * short_bits planes for
// the lookup codes plus long_bits planes for the ranking remap, and the
// dataset-mean centering vector applied before every sign test. Regeneration
// from (seed, short_bits, long_bits, table_count) is exact.
struct HashFamily {
    FamilyParams params;
    std::vector<Hyperplane> short_planes;  // [table * short_bits + bit]
    std::vector<Hyperplane> long_planes;   // [bit]
    std::array<double, kDescriptorDim> centering{};
    bool centering_set = false;

    const Hyperplane& short_plane(std::uint32_t table, std::uint32_t bit) const {
        return short_planes[table * params.short_bits + bit];
    }
};

HashFamily build_hash_family(const FamilyParams& params);

// Sets the centering vector to the componentwise mean of all descriptors,
// accumulated exactly in 64-bit integers. Throws if the stream is empty.
void set_centering(HashFamily& family, std::span<const FeatureSet> sets);

struct ShortCodes {
    std::uint32_t short_bits = 0;
    std::uint32_t table_count = 0;
    std::uint32_t point_count = 0;
    std::vector<std::uint32_t> values;  // [point * table_count + table]

    std::uint32_t at(std::uint32_t point, std::uint32_t table) const {
        return values[static_cast<std::size_t>(point) * table_count + table];
    }
};

struct LongCode {
    std::array<std::uint64_t, 2> words{};
    std::uint16_t bits = 0;

    friend bool operator==(const LongCode&, const LongCode&) = default;
};

inline int hamming(const LongCode& a, const LongCode& b) {
    if (a.bits != b.bits) throw std::invalid_argument("hamming: code lengths differ");
    return std::popcount(a.words[0] ^ b.words[0]) + std::popcount(a.words[1] ^ b.words[1]);
}

struct LongCodeSet {
    std::uint32_t long_bits = 0;
    std::vector<LongCode> codes;
};

// Short and long codes of one image under one family; params echoes the
// family so pair matching can reject codes from mismatched configurations.
struct ImageCodes {
    FamilyParams params;
    ShortCodes shorts;
    LongCodeSet longs;
};

// Sign-test kernels over an already-centered real vector. Bit j of a code is
// 1 iff the inner product with plane j is strictly positive (ties give 0).
std::uint32_t short_code_of(const HashFamily& family, std::uint32_t table,
                            std::span<const double> centered,
                            int reduce_rounds = kDefaultReduceRounds);
LongCode long_code_of(const HashFamily& family, std::span<const double> centered,
                      int reduce_rounds = kDefaultReduceRounds);

std::array<double, kDescriptorDim> center_descriptor(const HashFamily& family,
                                                     const Descriptor& desc);

ShortCodes short_codes(const HashFamily& family, const FeatureSet& fs,
                       int reduce_rounds = kDefaultReduceRounds);
LongCodeSet long_codes(const HashFamily& family, const FeatureSet& fs,
                       int reduce_rounds = kDefaultReduceRounds);
ImageCodes compute_codes(const HashFamily& family, const FeatureSet& fs,
                         int reduce_rounds = kDefaultReduceRounds);

// FNV-1a over the centering vector bytes; stored in code-cache headers so
// caches computed against a different dataset mean are rejected.
std::uint64_t centering_fingerprint(const HashFamily& family);

// Code-cache file, little-endian:
//   magic "CHCC", u32 version = 1, u32 short_bits, u32 long_bits,
//   u32 table_count, u64 seed, u64 centering fingerprint, u32 count,
//   u32 reserved; then per point table_count u32 short codes and two u64
//   long-code words.
void save_code_cache(const ImageCodes& codes, std::uint64_t centering_fp,
                     const std::filesystem::path& path);

struct CodeCacheHeader {
    FamilyParams params;
    std::uint64_t centering_fp = 0;
    std::uint32_t count = 0;
};

// Reads just the header; returns false on missing file or foreign magic.
bool read_code_cache_header(const std::filesystem::path& path, CodeCacheHeader& header);

// Loads a cache; throws if the echoed parameters or fingerprint mismatch.
ImageCodes load_code_cache(const std::filesystem::path& path, const FamilyParams& expected,
                           std::uint64_t expected_centering_fp);

// Stream-level variant for callers that already hold the bytes in memory;
// `origin` labels error messages.
ImageCodes parse_code_cache(std::istream& in, const std::string& origin,
                            const FamilyParams& expected, std::uint64_t expected_centering_fp);

// Streaming accumulator behind set_centering, for callers that cannot hold
// the whole dataset at once.
struct CenteringAccumulator {
    std::array<std::uint64_t, kDescriptorDim> sums{};
    std::uint64_t count = 0;

    void add(const FeatureSet& fs);
    void apply(HashFamily& family) const;  // throws when count == 0
};

}  // namespace cashash
