#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cashash/geometry.hpp"
#include "cashash/hashing.hpp"
#include "cashash/matcher.hpp"

namespace cashash {

// Every knob of the pipeline. File format: flat "key = value" lines with '#'
// comments; unknown keys are rejected. Command-line flags override by key.
struct RunConfig {
    std::filesystem::path manifest;
    std::filesystem::path out_dir = "matches";
    std::filesystem::path cache_dir;  // empty -> out_dir / "codes"

    std::uint32_t short_bits = 8;
    std::uint32_t long_bits = 128;
    std::uint32_t tables = 6;
    std::uint64_t seed = 1;

    std::uint32_t top_k = 10;
    std::uint32_t hamming_threshold = 40;
    double ratio = 0.8;
    std::uint32_t min_candidates_for_ratio = 2;
    int reduce_rounds = 3;

    double seed_fraction = 0.20;
    int ransac_iterations = 2048;
    double ransac_inlier_px = 2.0;
    double ransac_confidence = 0.999;
    double epipolar_band_px = 4.0;

    std::uint32_t block_images = 0;     // 0 -> sized from the memory budget
    std::uint32_t blocks_per_group = 0; // 0 -> sized from the memory budget
    std::uint32_t workers = 0;          // 0 -> hardware concurrency
    std::uint64_t memory_budget_mb = 1024;

    FamilyParams family_params() const {
        return FamilyParams{short_bits, long_bits, tables, seed};
    }
    MatchConfig match_config() const {
        return MatchConfig{top_k, hamming_threshold, ratio, min_candidates_for_ratio,
                           reduce_rounds};
    }
    RansacConfig ransac_config(std::uint64_t pair_seed) const {
        return RansacConfig{ransac_iterations, ransac_inlier_px, ransac_confidence, pair_seed};
    }
    StageConfig stage_config(std::uint64_t pair_seed) const {
        return StageConfig{seed_fraction, ransac_config(pair_seed), epipolar_band_px};
    }
    std::filesystem::path effective_cache_dir() const {
        return cache_dir.empty() ? out_dir / "codes" : cache_dir;
    }
};

// Applies "key = value" assignments from a config file. Unknown keys and
// malformed values throw.
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

// Single key=value assignment (shared by the file parser and flag overrides).
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

// Range checks across all knobs; throws std::invalid_argument.
void validate(const RunConfig& cfg);

}  // namespace cashash
