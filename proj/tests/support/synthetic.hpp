#pragma once

// Deterministic synthetic fixtures shared by the unit and acceptance suites:
// descriptor clouds with noisy twins, homography-warped pairs, exact
// two-view scenes, and on-disk datasets for the batch pipeline.

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "cashash/feature_io.hpp"
#include "cashash/geometry.hpp"
#include "cashash/rng.hpp"

namespace synthetic {

using cashash::Descriptor;
using cashash::FeatureSet;
using cashash::Keypoint;
using cashash::kDescriptorDim;

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("cashash_" + tag + "_" + std::to_string(counter()++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    static std::uint64_t& counter() {
        static std::uint64_t c = 0;
        return c;
    }
    std::filesystem::path path_;
};

inline Descriptor uniform_descriptor(std::mt19937_64& rng) {
    Descriptor d;
    for (auto& v : d) v = static_cast<std::uint8_t>(cashash::uniform_below(rng, 256));
    return d;
}

inline Descriptor noisy_copy(const Descriptor& base, double sigma, std::mt19937_64& rng) {
    Descriptor d;
    for (std::size_t i = 0; i < kDescriptorDim; ++i) {
        const double v = static_cast<double>(base[i]) + sigma * cashash::standard_normal(rng);
        d[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
    return d;
}

inline Keypoint grid_keypoint(std::uint32_t index, float scale = 2.0f) {
    return Keypoint{static_cast<float>(index % 1000), static_cast<float>(index / 1000), scale,
                    0.0f};
}

// Criterion-1 style pair: every query has a noisy twin in the train set,
// surrounded by uniform distractors.
struct NoisyPair {
    FeatureSet queries;
    FeatureSet trains;
};

inline NoisyPair make_noisy_pair(std::size_t query_count, std::size_t distractor_count,
                                 double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(cashash::mix64(seed, 0xc1u));
    NoisyPair pair;
    pair.queries.image_id = "queries";
    pair.trains.image_id = "trains";
    for (std::size_t i = 0; i < query_count; ++i) {
        const Descriptor base = uniform_descriptor(rng);
        pair.queries.descriptors.push_back(base);
        pair.queries.keypoints.push_back(grid_keypoint(static_cast<std::uint32_t>(i)));
        pair.trains.descriptors.push_back(noisy_copy(base, sigma, rng));
        pair.trains.keypoints.push_back(grid_keypoint(static_cast<std::uint32_t>(i)));
    }
    for (std::size_t i = 0; i < distractor_count; ++i) {
        pair.trains.descriptors.push_back(uniform_descriptor(rng));
        pair.trains.keypoints.push_back(
            grid_keypoint(static_cast<std::uint32_t>(query_count + i)));
    }
    return pair;
}

// Projective warp pair: image J holds the raw positions, image I their
// images under H (3x3, maps J coordinates to I coordinates).
struct WarpedPair {
    Eigen::Matrix3d h;  // J -> I
    FeatureSet image_i;
    FeatureSet image_j;
};

inline WarpedPair make_warped_pair(std::size_t point_count, double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(cashash::mix64(seed, 0x4a0u));
    WarpedPair out;
    out.h << 0.96, 0.05, 18.0,
             -0.04, 1.02, -9.0,
             1e-5, -2e-5, 1.0;
    out.image_i.image_id = "warp_i";
    out.image_j.image_id = "warp_j";
    for (std::size_t i = 0; i < point_count; ++i) {
        const double xj = 640.0 * cashash::uniform_unit(rng);
        const double yj = 480.0 * cashash::uniform_unit(rng);
        const Eigen::Vector3d pi = out.h * Eigen::Vector3d(xj, yj, 1.0);
        const Descriptor base = uniform_descriptor(rng);
        out.image_j.keypoints.push_back(
            {static_cast<float>(xj), static_cast<float>(yj), 2.0f, 0.0f});
        out.image_j.descriptors.push_back(noisy_copy(base, sigma, rng));
        out.image_i.keypoints.push_back({static_cast<float>(pi.x() / pi.z()),
                                         static_cast<float>(pi.y() / pi.z()), 2.0f, 0.0f});
        out.image_i.descriptors.push_back(base);
    }
    return out;
}

// Exact two-view scene: random 3D points in front of two calibrated cameras;
// correspondences satisfy p2' F p1 = 0 up to floating rounding.
struct TwoViewScene {
    Eigen::Matrix3d f;  // unit Frobenius norm, largest entry positive
    std::vector<cashash::Correspondence> correspondences;
};

inline Eigen::Matrix3d cross_matrix(const Eigen::Vector3d& t) {
    Eigen::Matrix3d m;
    m << 0, -t.z(), t.y(),
         t.z(), 0, -t.x(),
         -t.y(), t.x(), 0;
    return m;
}

inline Eigen::Matrix3d normalize_f(Eigen::Matrix3d f) {
    f /= f.norm();
    Eigen::Index r, c;
    f.cwiseAbs().maxCoeff(&r, &c);
    if (f(r, c) < 0) f = -f;
    return f;
}

inline TwoViewScene make_two_view_scene(std::size_t point_count, std::uint64_t seed) {
    std::mt19937_64 rng(cashash::mix64(seed, 0x2f1u));
    Eigen::Matrix3d k;
    k << 800, 0, 320,
         0, 800, 240,
         0, 0, 1;

    const double angle = 0.15 + 0.1 * cashash::uniform_unit(rng);
    Eigen::Vector3d axis(cashash::standard_normal(rng), cashash::standard_normal(rng),
                         cashash::standard_normal(rng));
    axis.normalize();
    const Eigen::Matrix3d r = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
    Eigen::Vector3d t(0.9, 0.15 * cashash::standard_normal(rng),
                      0.1 * cashash::standard_normal(rng));

    TwoViewScene scene;
    scene.f = normalize_f(k.inverse().transpose() * cross_matrix(t) * r * k.inverse());
    while (scene.correspondences.size() < point_count) {
        const Eigen::Vector3d x(4.0 * (cashash::uniform_unit(rng) - 0.5),
                                3.0 * (cashash::uniform_unit(rng) - 0.5),
                                4.0 + 4.0 * cashash::uniform_unit(rng));
        const Eigen::Vector3d p1 = k * x;
        const Eigen::Vector3d p2 = k * (r * x + t);
        if (p1.z() <= 0.1 || p2.z() <= 0.1) continue;
        scene.correspondences.push_back(
            {p1.x() / p1.z(), p1.y() / p1.z(), p2.x() / p2.z(), p2.y() / p2.z()});
    }
    return scene;
}

// Correspondences far from the scene's epipolar geometry (symmetric distance
// above the margin), for exact inlier/outlier boundary tests.
inline std::vector<cashash::Correspondence> make_outliers(const TwoViewScene& scene,
                                                          std::size_t count, double margin,
                                                          std::uint64_t seed) {
    std::mt19937_64 rng(cashash::mix64(seed, 0x0511u));
    std::vector<cashash::Correspondence> out;
    while (out.size() < count) {
        cashash::Correspondence c{640.0 * cashash::uniform_unit(rng),
                                  480.0 * cashash::uniform_unit(rng),
                                  640.0 * cashash::uniform_unit(rng),
                                  480.0 * cashash::uniform_unit(rng)};
        if (cashash::symmetric_epipolar_distance(scene.f, c) > margin) out.push_back(c);
    }
    return out;
}

// Multi-image dataset on disk: one 3D point cloud seen by `image_count`
// cameras on an arc, per-image descriptor noise, random detection scales.
struct DiskDataset {
    std::filesystem::path manifest;
    std::vector<std::filesystem::path> feature_files;
};

inline DiskDataset write_scene_dataset(const std::filesystem::path& dir, std::size_t image_count,
                                       std::size_t point_count, double sigma,
                                       std::uint64_t seed) {
    std::mt19937_64 rng(cashash::mix64(seed, 0xd15cu));
    Eigen::Matrix3d k;
    k << 700, 0, 320,
         0, 700, 240,
         0, 0, 1;

    std::vector<Eigen::Vector3d> points;
    std::vector<Descriptor> bases;
    for (std::size_t i = 0; i < point_count; ++i) {
        points.emplace_back(4.0 * (cashash::uniform_unit(rng) - 0.5),
                            3.0 * (cashash::uniform_unit(rng) - 0.5),
                            6.0 + 3.0 * cashash::uniform_unit(rng));
        bases.push_back(uniform_descriptor(rng));
    }

    DiskDataset ds;
    std::filesystem::create_directories(dir);
    std::string manifest_text;
    for (std::size_t img = 0; img < image_count; ++img) {
        const double yaw = 0.04 * (static_cast<double>(img) -
                                   static_cast<double>(image_count) / 2.0);
        const Eigen::Matrix3d r = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY())
                                      .toRotationMatrix();
        const Eigen::Vector3d t(0.25 * static_cast<double>(img), 0.0, 0.0);

        FeatureSet fs;
        fs.image_id = "img" + std::to_string(img);
        for (std::size_t p = 0; p < point_count; ++p) {
            const Eigen::Vector3d proj = k * (r * points[p] + t);
            if (proj.z() <= 0.1) continue;
            fs.keypoints.push_back({static_cast<float>(proj.x() / proj.z()),
                                    static_cast<float>(proj.y() / proj.z()),
                                    static_cast<float>(1.0 + 9.0 * cashash::uniform_unit(rng)),
                                    0.0f});
            fs.descriptors.push_back(noisy_copy(bases[p], sigma, rng));
        }
        const auto file = dir / (fs.image_id + ".chft");
        cashash::save_features(fs, file);
        ds.feature_files.push_back(file);
        manifest_text += fs.image_id + "\t" + fs.image_id + ".chft\n";
    }
    ds.manifest = dir / "manifest.txt";
    std::ofstream(ds.manifest, std::ios::binary) << manifest_text;
    return ds;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::string out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return out;
}

}  // namespace synthetic
