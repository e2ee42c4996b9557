#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cashash {

inline constexpr std::size_t kDescriptorDim = 128;

struct Keypoint {
    float x = 0.0f;
    float y = 0.0f;
    float scale = 0.0f;       // > 0 for valid keypoints
    float orientation = 0.0f; // radians

    friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

// SIFT convention: L2-normalized descriptor scaled to [0,255] and stored as
// unsigned bytes. All distance math promotes to wider types internally.
using Descriptor = std::array<std::uint8_t, kDescriptorDim>;

struct FeatureSet {
    std::string image_id;
    std::vector<Keypoint> keypoints;
    std::vector<Descriptor> descriptors;

    std::size_t size() const { return keypoints.size(); }
    bool empty() const { return keypoints.empty(); }
};

struct ManifestEntry {
    std::string image_id;
    std::filesystem::path path;
};

// Ordered list of (image_id, feature file). The position of an entry is the
// image's global index used by the scheduler and all output files.
struct DatasetManifest {
    std::vector<ManifestEntry> entries;

    std::size_t size() const { return entries.size(); }
};

struct MatchRecord {
    std::uint32_t query_index = 0;
    std::uint32_t train_index = 0;
    double distance_sq = 0.0;  // squared Euclidean descriptor distance

    friend bool operator==(const MatchRecord&, const MatchRecord&) = default;
};

// Distinct I/O failure classes, each reported with the byte offset at which
// the problem was detected.
enum class FeatureFileFault {
    MissingFile,
    BadMagic,
    BadVersion,
    Truncated,
    Unwritable,
};

class FeatureFileError : public std::runtime_error {
public:
    FeatureFileError(FeatureFileFault fault, const std::filesystem::path& path,
                     std::uint64_t byte_offset, const std::string& detail);

    FeatureFileFault fault() const { return fault_; }
    std::uint64_t byte_offset() const { return byte_offset_; }

private:
    FeatureFileFault fault_;
    std::uint64_t byte_offset_;
};

// Binary feature file, little-endian:
//   magic "CHFT", u32 version = 1, u32 count, u32 reserved   (16-byte header)
//   count records of { f32 x, f32 y, f32 scale, f32 orientation, u8[128] }.
FeatureSet load_features(const std::filesystem::path& path);
void save_features(const FeatureSet& fs, const std::filesystem::path& path);

inline constexpr std::size_t kFeatureFileHeaderBytes = 16;
inline constexpr std::size_t kFeatureRecordBytes = 16 + kDescriptorDim;

struct TopScaleSelection {
    FeatureSet features;
    // original_indices[i] is the index the i-th selected point had in the
    // input set; output preserves the input's relative order.
    std::vector<std::uint32_t> original_indices;
};

// Keeps the ceil(fraction * n) largest-scale keypoints, ties broken toward
// the smaller original index. fraction must lie in (0, 1].
TopScaleSelection select_top_scale(const FeatureSet& fs, double fraction);

// Match file, text:
//   # <image_id_I> <image_id_J> <count>
//   <query> <train> <distance_sq>          (one line per record)
// distance_sq is printed as the shortest decimal that round-trips.
void save_matches(const std::string& image_id_i, const std::string& image_id_j,
                  const std::vector<MatchRecord>& matches, const std::filesystem::path& path);

struct MatchFileContents {
    std::string image_id_i;
    std::string image_id_j;
    std::vector<MatchRecord> matches;
};

MatchFileContents load_matches(const std::filesystem::path& path);

// Manifest: UTF-8 text, one "image_id<TAB>path" per line, '#' comments and
// blank lines allowed. Relative paths are resolved against the manifest's
// directory. Image ids must be unique and whitespace-free.
DatasetManifest load_manifest(const std::filesystem::path& path);

// Converts a whitespace-separated text key file (header "count dim", then
// per point: row col scale orientation followed by dim byte values) into a
// FeatureSet. Note the row/col order: row is y, col is x.
FeatureSet parse_text_keys(const std::filesystem::path& path);

}  // namespace cashash
