#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cashash/config.hpp"

namespace cashash {

enum class MatchMode { Exhaustive, Guided };

struct StageTimings {
    double hash_s = 0;      // code computation (internal hash pass)
    double seed_s = 0;      // stage-1 seed matching, summed across workers
    double estimate_s = 0;  // fundamental-matrix estimation, summed across workers
    double match_s = 0;     // matching pass wall time
    double io_s = 0;        // loader reads plus sink writes
};

struct HashSummary {
    std::size_t images = 0;
    std::size_t written = 0;
    std::size_t cached = 0;  // up-to-date caches skipped
    double elapsed_s = 0;
    std::vector<std::string> failures;
};

// Computes (or refreshes) per-image code caches under the hashing-mode
// two-slot residency schedule. Idempotent: caches whose parameter echo and
// centering fingerprint match are not recomputed.
HashSummary run_hash(const RunConfig& cfg);

struct RunSummary {
    std::size_t image_count = 0;
    std::size_t pairs_planned = 0;   // exhaustive: C(K,2); guided: accepted pairs
    std::size_t pairs_matched = 0;
    std::size_t total_matches = 0;
    std::size_t seed_pairs = 0;      // guided only: pairs seen by stage 1
    std::size_t accepted_pairs = 0;  // guided only: pairs past the geometry gate
    StageTimings timings;
    double pairs_per_s = 0;
    std::vector<std::string> failures;
};

// Batch matching over the manifest. Exhaustive mode covers every pair;
// guided mode runs the top-scale seed stage, gates pairs on epipolar
// geometry, writes the geometry report, and matches the survivors with the
// epipolar band. Match files land in cfg.out_dir, one per pair.
RunSummary run_match(const RunConfig& cfg, MatchMode mode);

struct OracleSummary {
    std::size_t pairs = 0;
    std::size_t oracle_matches = 0;
    std::size_t cascade_matches = 0;
    std::size_t agreeing_matches = 0;
    double recall = 1.0;
    double precision = 1.0;
    double elapsed_s = 0;
    std::vector<std::string> failures;
};

// Brute-force matching over every pair, written next to a per-pair and
// aggregate recall/precision report of the cascade output against it.
OracleSummary run_oracle(const RunConfig& cfg);

struct BenchReduceRow {
    int reduce_rounds = 0;
    double ns_per_op = 0;
    double checksum = 0;  // identical across rows: the workload is integer-valued
};

// Times reduce_dot over a fixed random workload for every tail setting.
std::vector<BenchReduceRow> bench_reduce(std::uint64_t seed, std::size_t vector_pairs = 2048,
                                         std::size_t repetitions = 64);

// Deterministic output names.
std::string pair_file_name(std::uint32_t image_i, std::uint32_t image_j);
std::string oracle_file_name(std::uint32_t image_i, std::uint32_t image_j);
std::filesystem::path code_cache_path(const std::filesystem::path& cache_dir,
                                      const std::string& image_id);

inline constexpr const char* kGeometryReportName = "geometry.txt";
inline constexpr const char* kOracleReportName = "oracle_report.txt";

}  // namespace cashash
