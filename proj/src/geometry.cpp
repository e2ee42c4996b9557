#include "cashash/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <random>

#include "cashash/rng.hpp"

namespace cashash {

namespace {

FundamentalMatrix normalize_scale_and_sign(FundamentalMatrix f) {
    const double norm = f.norm();
    if (norm > 0.0) f /= norm;
    Eigen::Index r = 0, c = 0;
    f.cwiseAbs().maxCoeff(&r, &c);
    if (f(r, c) < 0.0) f = -f;
    return f;
}

FundamentalMatrix enforce_rank2(const FundamentalMatrix& f) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(f, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d s = svd.singularValues();
    s(2) = 0.0;
    return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

}  // namespace

NormalizedPoints normalize_points(std::span<const Eigen::Vector2d> points) {
    if (points.empty()) throw std::invalid_argument("normalize_points: empty input");

    Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
    for (const auto& p : points) centroid += p;
    centroid /= static_cast<double>(points.size());

    double mean_dist = 0.0;
    for (const auto& p : points) mean_dist += (p - centroid).norm();
    mean_dist /= static_cast<double>(points.size());
    if (mean_dist <= 0.0)
        throw std::invalid_argument("normalize_points: all points coincide");

    const double scale = std::sqrt(2.0) / mean_dist;
    NormalizedPoints out;
    out.transform << scale, 0, -scale * centroid.x(),
                     0, scale, -scale * centroid.y(),
                     0, 0, 1;
    out.points.reserve(points.size());
    for (const auto& p : points) out.points.push_back((p - centroid) * scale);
    return out;
}

FundamentalMatrix eight_point(std::span<const Correspondence> correspondences) {
    const std::size_t n = correspondences.size();
    if (n < 8) throw std::invalid_argument("eight_point: needs at least 8 correspondences");

    std::vector<Eigen::Vector2d> p1, p2;
    p1.reserve(n);
    p2.reserve(n);
    for (const Correspondence& c : correspondences) {
        p1.emplace_back(c.x1, c.y1);
        p2.emplace_back(c.x2, c.y2);
    }
    const NormalizedPoints n1 = normalize_points(p1);
    const NormalizedPoints n2 = normalize_points(p2);

    Eigen::MatrixXd a(n, 9);
    for (std::size_t i = 0; i < n; ++i) {
        const double x1 = n1.points[i].x(), y1 = n1.points[i].y();
        const double x2 = n2.points[i].x(), y2 = n2.points[i].y();
        a.row(static_cast<Eigen::Index>(i)) << x2 * x1, x2 * y1, x2,
                                               y2 * x1, y2 * y1, y2,
                                               x1, y1, 1.0;
    }

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    // A one-dimensional null space is required; a second vanishing singular
    // value means the configuration does not pin down F (planar scene or
    // pure rotation).
    if (sv(7) <= 1e-9 * sv(0))
        throw std::invalid_argument("eight_point: degenerate configuration");

    const Eigen::VectorXd f_vec = svd.matrixV().col(8);
    FundamentalMatrix f_norm;
    f_norm << f_vec(0), f_vec(1), f_vec(2),
              f_vec(3), f_vec(4), f_vec(5),
              f_vec(6), f_vec(7), f_vec(8);
    f_norm = enforce_rank2(f_norm);

    const FundamentalMatrix f = n2.transform.transpose() * f_norm * n1.transform;
    return normalize_scale_and_sign(f);
}

EpipolarLine epipolar_line(const FundamentalMatrix& f, double x, double y) {
    const Eigen::Vector3d l = f * Eigen::Vector3d(x, y, 1.0);
    return EpipolarLine{l(0), l(1), l(2)};
}

double epipolar_distance(const EpipolarLine& l, double x, double y) {
    if (l.degenerate()) throw std::invalid_argument("epipolar_distance: degenerate line");
    return std::abs(l.a * x + l.b * y + l.c) / std::sqrt(l.a * l.a + l.b * l.b);
}

double symmetric_epipolar_distance(const FundamentalMatrix& f, const Correspondence& c) {
    const EpipolarLine forward = epipolar_line(f, c.x1, c.y1);
    const EpipolarLine backward = [&] {
        const Eigen::Vector3d l = f.transpose() * Eigen::Vector3d(c.x2, c.y2, 1.0);
        return EpipolarLine{l(0), l(1), l(2)};
    }();
    constexpr double kInf = std::numeric_limits<double>::infinity();
    const double d_forward =
        forward.degenerate() ? kInf : epipolar_distance(forward, c.x2, c.y2);
    const double d_backward =
        backward.degenerate() ? kInf : epipolar_distance(backward, c.x1, c.y1);
    return std::max(d_forward, d_backward);
}

namespace {

std::uint32_t count_inliers(const FundamentalMatrix& f,
                            std::span<const Correspondence> matches, double threshold,
                            std::vector<std::uint8_t>* mask) {
    std::uint32_t count = 0;
    if (mask) mask->assign(matches.size(), 0);
    for (std::size_t i = 0; i < matches.size(); ++i) {
        if (symmetric_epipolar_distance(f, matches[i]) <= threshold) {
            ++count;
            if (mask) (*mask)[i] = 1;
        }
    }
    return count;
}

// Deterministic minimal sample for hypothesis h: 8 distinct indices from a
// generator private to the hypothesis.
std::array<std::uint32_t, 8> draw_sample(std::uint64_t seed, std::uint64_t hypothesis,
                                         std::uint32_t n) {
    std::mt19937_64 rng(mix64(seed, 0x8a3cu, hypothesis));
    std::array<std::uint32_t, 8> sample{};
    std::size_t filled = 0;
    while (filled < sample.size()) {
        const auto idx = static_cast<std::uint32_t>(uniform_below(rng, n));
        bool duplicate = false;
        for (std::size_t i = 0; i < filled; ++i) duplicate |= (sample[i] == idx);
        if (!duplicate) sample[filled++] = idx;
    }
    return sample;
}

int iterations_for_confidence(double confidence, double inlier_ratio, int cap) {
    if (inlier_ratio >= 1.0) return 1;
    const double p_sample = std::pow(inlier_ratio, 8);
    if (p_sample <= 0.0) return cap;
    const double denom = std::log1p(-p_sample);
    if (denom >= 0.0) return cap;
    const double needed = std::log(1.0 - confidence) / denom;
    if (needed >= static_cast<double>(cap)) return cap;
    return std::max(1, static_cast<int>(std::ceil(needed)));
}

}  // namespace

TwoViewGeometry ransac_fundamental(std::span<const Correspondence> matches,
                                   const RansacConfig& cfg) {
    if (cfg.max_iterations < 1) throw std::invalid_argument("ransac: max_iterations >= 1");
    if (!(cfg.inlier_threshold_px > 0.0)) throw std::invalid_argument("ransac: threshold > 0");

    TwoViewGeometry geom;
    geom.seed_match_count = static_cast<std::uint32_t>(matches.size());
    geom.inlier_mask.assign(matches.size(), 0);
    if (matches.size() < kMinSeedMatches) return geom;  // gate: too few seeds, no estimation

    const auto n = static_cast<std::uint32_t>(matches.size());
    std::uint32_t best_inliers = 0;
    FundamentalMatrix best_f = FundamentalMatrix::Zero();
    bool have_model = false;
    int needed = cfg.max_iterations;

    std::array<Correspondence, 8> minimal;
    for (int h = 0; h < needed; ++h) {
        const auto sample = draw_sample(cfg.seed, static_cast<std::uint64_t>(h), n);
        for (std::size_t i = 0; i < 8; ++i) minimal[i] = matches[sample[i]];
        FundamentalMatrix f;
        try {
            f = eight_point(minimal);
        } catch (const std::invalid_argument&) {
            continue;  // degenerate sample
        }
        const std::uint32_t inliers = count_inliers(f, matches, cfg.inlier_threshold_px, nullptr);
        if (inliers > best_inliers) {  // ties keep the lower hypothesis index
            best_inliers = inliers;
            best_f = f;
            have_model = true;
            const double w = static_cast<double>(inliers) / static_cast<double>(n);
            needed = std::min(cfg.max_iterations,
                              iterations_for_confidence(cfg.confidence, w, cfg.max_iterations));
        }
    }
    if (!have_model) return geom;

    // Refit on the consensus set when it can support the linear system.
    std::vector<std::uint8_t> mask;
    count_inliers(best_f, matches, cfg.inlier_threshold_px, &mask);
    std::vector<Correspondence> consensus;
    for (std::size_t i = 0; i < matches.size(); ++i)
        if (mask[i]) consensus.push_back(matches[i]);
    if (consensus.size() >= 8) {
        try {
            const FundamentalMatrix refit = eight_point(consensus);
            const std::uint32_t refit_inliers =
                count_inliers(refit, matches, cfg.inlier_threshold_px, &mask);
            if (refit_inliers >= best_inliers) {
                best_f = refit;
                best_inliers = refit_inliers;
            } else {
                count_inliers(best_f, matches, cfg.inlier_threshold_px, &mask);
            }
        } catch (const std::invalid_argument&) {
            count_inliers(best_f, matches, cfg.inlier_threshold_px, &mask);
        }
    }

    geom.f = best_f;
    geom.inlier_count = best_inliers;
    geom.inlier_mask = std::move(mask);
    geom.accepted = best_inliers >= acceptance_inlier_floor(geom.seed_match_count);
    return geom;
}

std::vector<MatchRecord> guided_match_pair(const FeatureSet& fs_i, const FeatureSet& fs_j,
                                           const ImageCodes& codes_i, const ImageCodes& codes_j,
                                           const FundamentalMatrix& f, const MatchConfig& cfg,
                                           double band_px) {
    const CandidateFilter filter = [&](std::uint32_t q, std::vector<std::uint32_t>& candidates) {
        const Keypoint& kp = fs_i.keypoints[q];
        const EpipolarLine l = epipolar_line(f, kp.x, kp.y);
        if (l.degenerate()) return false;  // match this query unguided
        const double inv_norm = 1.0 / std::sqrt(l.a * l.a + l.b * l.b);
        std::erase_if(candidates, [&](std::uint32_t idx) {
            const Keypoint& t = fs_j.keypoints[idx];
            return std::abs(l.a * t.x + l.b * t.y + l.c) * inv_norm > band_px;
        });
        return true;
    };
    return match_pair_filtered(fs_i, fs_j, codes_i, codes_j, cfg, filter);
}

TwoStageResult two_stage_match(const FeatureSet& fs_i, const FeatureSet& fs_j,
                               const HashFamily& family, const MatchConfig& cfg,
                               const StageConfig& stage, const ImageCodes* full_codes_i,
                               const ImageCodes* full_codes_j) {
    const TopScaleSelection top_i = select_top_scale(fs_i, stage.seed_fraction);
    const TopScaleSelection top_j = select_top_scale(fs_j, stage.seed_fraction);
    const ImageCodes seed_codes_i = compute_codes(family, top_i.features, cfg.reduce_rounds);
    const ImageCodes seed_codes_j = compute_codes(family, top_j.features, cfg.reduce_rounds);
    const std::vector<MatchRecord> seeds =
        match_pair(top_i.features, top_j.features, seed_codes_i, seed_codes_j, cfg);

    std::vector<Correspondence> correspondences;
    correspondences.reserve(seeds.size());
    for (const MatchRecord& m : seeds) {
        const Keypoint& a = fs_i.keypoints[top_i.original_indices[m.query_index]];
        const Keypoint& b = fs_j.keypoints[top_j.original_indices[m.train_index]];
        correspondences.push_back({a.x, a.y, b.x, b.y});
    }

    TwoStageResult result;
    result.geometry = ransac_fundamental(correspondences, stage.ransac);
    if (!result.geometry.accepted) return result;  // pair skipped

    ImageCodes local_i, local_j;
    if (!full_codes_i) {
        local_i = compute_codes(family, fs_i, cfg.reduce_rounds);
        full_codes_i = &local_i;
    }
    if (!full_codes_j) {
        local_j = compute_codes(family, fs_j, cfg.reduce_rounds);
        full_codes_j = &local_j;
    }
    result.matches = guided_match_pair(fs_i, fs_j, *full_codes_i, *full_codes_j,
                                       result.geometry.f, cfg, stage.band_px);
    return result;
}

}  // namespace cashash
