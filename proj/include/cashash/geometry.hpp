#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cashash/feature_io.hpp"
#include "cashash/hashing.hpp"
#include "cashash/matcher.hpp"

namespace cashash {

// Point correspondence in pixel coordinates, image I -> image J.
struct Correspondence {
    double x1 = 0, y1 = 0;
    double x2 = 0, y2 = 0;
};

// Rank-2 fundamental matrix, unit Frobenius norm, sign fixed so the
// largest-magnitude entry is positive. p2' F p1 = 0 for true matches.
using FundamentalMatrix = Eigen::Matrix3d;

struct EpipolarLine {
    double a = 0, b = 0, c = 0;

    bool degenerate() const { return a == 0.0 && b == 0.0; }
};

struct RansacConfig {
    int max_iterations = 2048;
    double inlier_threshold_px = 2.0;  // symmetric epipolar distance gate
    double confidence = 0.999;
    std::uint64_t seed = 1;
};

struct TwoViewGeometry {
    FundamentalMatrix f = FundamentalMatrix::Zero();
    std::uint32_t seed_match_count = 0;
    std::uint32_t inlier_count = 0;
    bool accepted = false;
    std::vector<std::uint8_t> inlier_mask;  // per seed match, 0/1
};

// Hartley normalization: centroid to the origin, mean distance sqrt(2).
// Returns the transformed points and the similarity T with
// transformed = T * (x, y, 1). Throws when all points coincide.
struct NormalizedPoints {
    std::vector<Eigen::Vector2d> points;
    Eigen::Matrix3d transform;
};

NormalizedPoints normalize_points(std::span<const Eigen::Vector2d> points);

// Linear least-squares eight-point estimate on normalized coordinates with
// rank-2 enforcement. Throws on fewer than 8 correspondences or a
// rank-deficient design (degenerate configuration, e.g. pure rotation).
FundamentalMatrix eight_point(std::span<const Correspondence> correspondences);

// l = F * (x, y, 1); the line in image J a query point of image I maps to.
EpipolarLine epipolar_line(const FundamentalMatrix& f, double x, double y);

// |a x' + b y' + c| / sqrt(a^2 + b^2). Throws on a degenerate line.
double epipolar_distance(const EpipolarLine& l, double x, double y);

// max of the two directed point-line distances; used for inlier scoring.
double symmetric_epipolar_distance(const FundamentalMatrix& f, const Correspondence& c);

// Classic RANSAC over minimal eight-point samples with inlier refit.
// Gating per the two-stage protocol: fewer than 16 seed matches rejects
// without estimation; acceptance requires inlier_count >= ceil(2/3 * seeds).
// Hypothesis h draws its sample from a generator seeded by (cfg.seed, h),
// so evaluation can fan out without changing the selected model.
TwoViewGeometry ransac_fundamental(std::span<const Correspondence> matches,
                                   const RansacConfig& cfg);

inline std::uint32_t acceptance_inlier_floor(std::uint32_t seed_matches) {
    return (2 * seed_matches + 2) / 3;  // ceil(2/3 * seeds)
}
inline constexpr std::uint32_t kMinSeedMatches = 16;

// Cascade matching with the epipolar band: between lookup and ranking each
// query's candidates are cut to {p' : dist(p', l_q) <= band_px}. Queries
// whose epipolar line is degenerate fall back to unguided matching.
std::vector<MatchRecord> guided_match_pair(const FeatureSet& fs_i, const FeatureSet& fs_j,
                                           const ImageCodes& codes_i, const ImageCodes& codes_j,
                                           const FundamentalMatrix& f, const MatchConfig& cfg,
                                           double band_px);

struct StageConfig {
    double seed_fraction = 0.20;  // top-scale share used by the seed stage
    RansacConfig ransac;
    double band_px = 4.0;
};

struct TwoStageResult {
    TwoViewGeometry geometry;
    std::vector<MatchRecord> matches;  // empty when the pair is not accepted
};

// Seed stage on the top-scale subsets, geometry gate, then guided matching
// over the full feature sets. Full codes may be supplied to avoid
// recomputation; otherwise they are derived from the family.
TwoStageResult two_stage_match(const FeatureSet& fs_i, const FeatureSet& fs_j,
                               const HashFamily& family, const MatchConfig& cfg,
                               const StageConfig& stage,
                               const ImageCodes* full_codes_i = nullptr,
                               const ImageCodes* full_codes_j = nullptr);

}  // namespace cashash
