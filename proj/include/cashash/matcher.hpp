#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "cashash/feature_io.hpp"
#include "cashash/hashing.hpp"

namespace cashash {

struct MatchConfig {
    std::uint32_t top_k = 10;              // candidates kept after Hamming ranking
    std::uint32_t hamming_threshold = 40;  // ranking histogram cutoff (inclusive)
    double ratio = 0.8;                    // Lowe ratio on distances, (0,1)
    // When the thresholded ranking is non-empty but smaller than this, the
    // query is re-ranked without the cutoff so the ratio test keeps its
    // second distance. An empty thresholded ranking stays a rejection.
    std::uint32_t min_candidates_for_ratio = 2;
    int reduce_rounds = kDefaultReduceRounds;
};

void validate(const MatchConfig& cfg, std::uint32_t long_bits);

// Per-table lookup structure over the train image's short codes: for every
// table, points grouped by code (CSR over the sorted unique codes), points
// within a bucket in ascending index order.
struct BucketIndex {
    struct Table {
        std::vector<std::uint32_t> codes;    // sorted unique bucket codes
        std::vector<std::uint32_t> offsets;  // codes.size() + 1
        std::vector<std::uint32_t> points;   // point ids, bucket-major
    };
    std::uint32_t short_bits = 0;
    std::uint32_t point_count = 0;
    std::vector<Table> tables;

    std::span<const std::uint32_t> bucket(std::uint32_t table, std::uint32_t code) const;
};

BucketIndex build_bucket_index(const ShortCodes& train_codes);

// Union of the train points sharing a bucket with the query in at least one
// table; deduplicated, ascending.
std::vector<std::uint32_t> lookup_candidates(std::span<const std::uint32_t> query_codes,
                                             const BucketIndex& index);

// Hamming-distance counting sort of a candidate set, distances above the
// threshold discarded. bucket(d) holds the candidates at distance d in
// ascending index order.
struct RankHistogram {
    std::uint32_t threshold = 0;
    std::vector<std::uint32_t> offsets;  // threshold + 2 entries
    std::vector<std::uint32_t> items;

    std::span<const std::uint32_t> bucket(std::uint32_t distance) const {
        return {items.data() + offsets[distance], items.data() + offsets[distance + 1]};
    }
};

RankHistogram rank_histogram(const LongCode& query, std::span<const std::uint32_t> candidates,
                             std::span<const LongCode> train_longs, std::uint32_t threshold);

// Top-k candidates by ascending Hamming distance (ties by ascending index),
// restricted to distances <= cfg.hamming_threshold.
std::vector<std::uint32_t> rank_by_hamming(const LongCode& query,
                                           std::span<const std::uint32_t> candidates,
                                           std::span<const LongCode> train_longs,
                                           const MatchConfig& cfg);

struct VerifiedMatch {
    std::uint32_t train_index = 0;
    double distance_sq = 0.0;
};

// Exact squared Euclidean distances over the ranked candidates; returns the
// nearest when nearest/second-nearest passes the squared ratio test. Fewer
// than two candidates, or a zero second-nearest distance (exact duplicate),
// is a rejection.
std::optional<VerifiedMatch> euclidean_verify(const Descriptor& query,
                                              std::span<const std::uint32_t> ranked,
                                              std::span<const Descriptor> train_descs,
                                              const MatchConfig& cfg);

double descriptor_distance_sq(const Descriptor& a, const Descriptor& b,
                              int reduce_rounds = kDefaultReduceRounds);

// Optional per-query candidate reduction applied between lookup and ranking
// (the guided-matching hook). Returns false to skip filtering the query.
using CandidateFilter =
    std::function<bool(std::uint32_t query_index, std::vector<std::uint32_t>& candidates)>;

// Full pipeline for one image pair: lookup, thresholded Hamming ranking,
// Euclidean verification per query point of I against J. Output is sorted
// by query index with at most one record per query.
std::vector<MatchRecord> match_pair(const FeatureSet& fs_i, const FeatureSet& fs_j,
                                    const ImageCodes& codes_i, const ImageCodes& codes_j,
                                    const MatchConfig& cfg);

std::vector<MatchRecord> match_pair_filtered(const FeatureSet& fs_i, const FeatureSet& fs_j,
                                             const ImageCodes& codes_i, const ImageCodes& codes_j,
                                             const MatchConfig& cfg,
                                             const CandidateFilter& filter);

// Exhaustive nearest / second-nearest matcher with the identical ratio rule;
// the oracle the cascade is measured against.
std::vector<MatchRecord> brute_force_match(const FeatureSet& fs_i, const FeatureSet& fs_j,
                                           double ratio);

}  // namespace cashash
