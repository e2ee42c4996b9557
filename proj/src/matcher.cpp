#include "cashash/matcher.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace cashash {

void validate(const MatchConfig& cfg, std::uint32_t long_bits) {
    if (cfg.top_k < 2) throw std::invalid_argument("top_k must be >= 2 for the ratio test");
    if (cfg.hamming_threshold > long_bits)
        throw std::invalid_argument("hamming_threshold exceeds long code length");
    if (!(cfg.ratio > 0.0 && cfg.ratio < 1.0))
        throw std::invalid_argument("ratio must be in (0, 1)");
    if (cfg.reduce_rounds < 0 || cfg.reduce_rounds > kMaxReduceRounds)
        throw std::invalid_argument("reduce_rounds out of range 0..7");
}

std::span<const std::uint32_t> BucketIndex::bucket(std::uint32_t table, std::uint32_t code) const {
    const Table& t = tables[table];
    const auto it = std::lower_bound(t.codes.begin(), t.codes.end(), code);
    if (it == t.codes.end() || *it != code) return {};
    const auto slot = static_cast<std::size_t>(it - t.codes.begin());
    return {t.points.data() + t.offsets[slot], t.points.data() + t.offsets[slot + 1]};
}

BucketIndex build_bucket_index(const ShortCodes& train_codes) {
    BucketIndex index;
    index.short_bits = train_codes.short_bits;
    index.point_count = train_codes.point_count;
    index.tables.resize(train_codes.table_count);

    std::vector<std::pair<std::uint32_t, std::uint32_t>> entries(train_codes.point_count);
    for (std::uint32_t t = 0; t < train_codes.table_count; ++t) {
        for (std::uint32_t p = 0; p < train_codes.point_count; ++p)
            entries[p] = {train_codes.at(p, t), p};
        std::sort(entries.begin(), entries.end());

        BucketIndex::Table& table = index.tables[t];
        table.points.resize(entries.size());
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (i == 0 || entries[i].first != entries[i - 1].first) {
                table.codes.push_back(entries[i].first);
                table.offsets.push_back(static_cast<std::uint32_t>(i));
            }
            table.points[i] = entries[i].second;
        }
        table.offsets.push_back(static_cast<std::uint32_t>(entries.size()));
    }
    return index;
}

std::vector<std::uint32_t> lookup_candidates(std::span<const std::uint32_t> query_codes,
                                             const BucketIndex& index) {
    std::vector<std::uint32_t> out;
    for (std::uint32_t t = 0; t < index.tables.size(); ++t) {
        const auto bucket = index.bucket(t, query_codes[t]);
        out.insert(out.end(), bucket.begin(), bucket.end());
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

namespace {

// Shared two-pass counting sort; dists holds one entry per candidate.
void fill_histogram(const LongCode& query, std::span<const std::uint32_t> candidates,
                    std::span<const LongCode> train_longs, std::uint32_t threshold,
                    std::vector<std::uint32_t>& dists, RankHistogram& hist) {
    dists.resize(candidates.size());
    hist.threshold = threshold;
    hist.offsets.assign(threshold + 2, 0);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto d = static_cast<std::uint32_t>(hamming(query, train_longs[candidates[i]]));
        dists[i] = d;
        if (d <= threshold) ++hist.offsets[d + 1];
    }
    for (std::uint32_t d = 0; d <= threshold; ++d) hist.offsets[d + 1] += hist.offsets[d];
    hist.items.resize(hist.offsets[threshold + 1]);
    std::vector<std::uint32_t> cursor(hist.offsets.begin(), hist.offsets.end() - 1);
    for (std::size_t i = 0; i < candidates.size(); ++i)
        if (dists[i] <= threshold) hist.items[cursor[dists[i]]++] = candidates[i];
}

}  // namespace

RankHistogram rank_histogram(const LongCode& query, std::span<const std::uint32_t> candidates,
                             std::span<const LongCode> train_longs, std::uint32_t threshold) {
    RankHistogram hist;
    std::vector<std::uint32_t> dists;
    fill_histogram(query, candidates, train_longs, threshold, dists, hist);
    return hist;
}

std::vector<std::uint32_t> rank_by_hamming(const LongCode& query,
                                           std::span<const std::uint32_t> candidates,
                                           std::span<const LongCode> train_longs,
                                           const MatchConfig& cfg) {
    const RankHistogram hist = rank_histogram(query, candidates, train_longs,
                                              cfg.hamming_threshold);
    const std::size_t keep = std::min<std::size_t>(cfg.top_k, hist.items.size());
    return {hist.items.begin(), hist.items.begin() + keep};
}

double descriptor_distance_sq(const Descriptor& a, const Descriptor& b, int reduce_rounds) {
    // Differences are integers in [-255, 255]; the reduction is exact, so
    // every reduce_rounds setting returns the identical value.
    std::array<double, kDescriptorDim> diff;
    for (std::size_t i = 0; i < kDescriptorDim; ++i)
        diff[i] = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    return reduce_dot<double>(diff, diff, reduce_rounds);
}

std::optional<VerifiedMatch> euclidean_verify(const Descriptor& query,
                                              std::span<const std::uint32_t> ranked,
                                              std::span<const Descriptor> train_descs,
                                              const MatchConfig& cfg) {
    if (ranked.size() < 2) return std::nullopt;

    double best = std::numeric_limits<double>::infinity();
    double second = std::numeric_limits<double>::infinity();
    std::uint32_t best_index = 0;
    for (std::uint32_t idx : ranked) {
        const double d = descriptor_distance_sq(query, train_descs[idx], cfg.reduce_rounds);
        if (d < best) {
            second = best;
            best = d;
            best_index = idx;
        } else if (d < second) {
            second = d;
        }
    }
    if (second == 0.0) return std::nullopt;  // exact duplicates carry no distinctive match
    if (best < cfg.ratio * cfg.ratio * second) return VerifiedMatch{best_index, best};
    return std::nullopt;
}

namespace {

std::vector<MatchRecord> run_match(const FeatureSet& fs_i, const FeatureSet& fs_j,
                                   const ImageCodes& codes_i, const ImageCodes& codes_j,
                                   const MatchConfig& cfg, const CandidateFilter* filter) {
    if (!(codes_i.params == codes_j.params))
        throw std::invalid_argument("match_pair: codes come from different hash families");
    validate(cfg, codes_i.params.long_bits);
    if (fs_i.size() != codes_i.shorts.point_count || fs_j.size() != codes_j.shorts.point_count)
        throw std::invalid_argument("match_pair: code/point count mismatch");

    std::vector<MatchRecord> matches;
    if (fs_i.empty() || fs_j.empty()) return matches;

    const BucketIndex index = build_bucket_index(codes_j.shorts);
    const std::span<const LongCode> train_longs(codes_j.longs.codes);
    const std::span<const Descriptor> train_descs(fs_j.descriptors);
    const std::uint32_t min_ranked = std::max<std::uint32_t>(2, cfg.min_candidates_for_ratio);

    std::vector<std::uint32_t> candidates;
    std::vector<std::uint32_t> dists;
    RankHistogram hist;
    std::vector<std::uint32_t> query_codes(codes_i.shorts.table_count);

    for (std::uint32_t q = 0; q < fs_i.size(); ++q) {
        candidates.clear();
        for (std::uint32_t t = 0; t < codes_i.shorts.table_count; ++t) {
            query_codes[t] = codes_i.shorts.at(q, t);
            const auto bucket = index.bucket(t, query_codes[t]);
            candidates.insert(candidates.end(), bucket.begin(), bucket.end());
        }
        std::sort(candidates.begin(), candidates.end());
        candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
        if (filter && !candidates.empty()) (*filter)(q, candidates);
        if (candidates.empty()) continue;

        const LongCode& query_long = codes_i.longs.codes[q];
        fill_histogram(query_long, candidates, train_longs, cfg.hamming_threshold, dists, hist);
        std::size_t keep = std::min<std::size_t>(cfg.top_k, hist.items.size());
        std::span<const std::uint32_t> ranked(hist.items.data(), keep);
        // An empty thresholded ranking means no candidate is plausible at
        // all and the query stays unmatched. A non-empty one smaller than
        // the ratio test needs is re-ranked without the threshold: the
        // second-nearest distance is a statistic the cutoff must not starve.
        if (!ranked.empty() && ranked.size() < min_ranked &&
            candidates.size() > hist.items.size()) {
            fill_histogram(query_long, candidates, train_longs, codes_i.params.long_bits, dists,
                           hist);
            keep = std::min<std::size_t>(cfg.top_k, hist.items.size());
            ranked = {hist.items.data(), keep};
        }

        if (const auto verified = euclidean_verify(fs_i.descriptors[q], ranked, train_descs, cfg))
            matches.push_back({q, verified->train_index, verified->distance_sq});
    }
    return matches;
}

}  // namespace

std::vector<MatchRecord> match_pair(const FeatureSet& fs_i, const FeatureSet& fs_j,
                                    const ImageCodes& codes_i, const ImageCodes& codes_j,
                                    const MatchConfig& cfg) {
    return run_match(fs_i, fs_j, codes_i, codes_j, cfg, nullptr);
}

std::vector<MatchRecord> match_pair_filtered(const FeatureSet& fs_i, const FeatureSet& fs_j,
                                             const ImageCodes& codes_i, const ImageCodes& codes_j,
                                             const MatchConfig& cfg,
                                             const CandidateFilter& filter) {
    return run_match(fs_i, fs_j, codes_i, codes_j, cfg, &filter);
}

std::vector<MatchRecord> brute_force_match(const FeatureSet& fs_i, const FeatureSet& fs_j,
                                           double ratio) {
    std::vector<MatchRecord> matches;
    if (fs_j.size() < 2) return matches;

    const double ratio_sq = ratio * ratio;
    for (std::uint32_t q = 0; q < fs_i.size(); ++q) {
        const Descriptor& query = fs_i.descriptors[q];
        std::uint64_t best = std::numeric_limits<std::uint64_t>::max();
        std::uint64_t second = std::numeric_limits<std::uint64_t>::max();
        std::uint32_t best_index = 0;
        for (std::uint32_t t = 0; t < fs_j.size(); ++t) {
            const Descriptor& train = fs_j.descriptors[t];
            std::uint64_t d = 0;
            for (std::size_t c = 0; c < kDescriptorDim; ++c) {
                const int diff = static_cast<int>(query[c]) - static_cast<int>(train[c]);
                d += static_cast<std::uint64_t>(diff * diff);
            }
            if (d < best) {
                second = best;
                best = d;
                best_index = t;
            } else if (d < second) {
                second = d;
            }
        }
        if (second == 0) continue;
        if (static_cast<double>(best) < ratio_sq * static_cast<double>(second))
            matches.push_back({q, best_index, static_cast<double>(best)});
    }
    return matches;
}

}  // namespace cashash
