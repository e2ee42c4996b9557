#include "cashash/feature_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace cashash {

namespace {

constexpr char kFeatureMagic[4] = {'C', 'H', 'F', 'T'};
constexpr std::uint32_t kFeatureVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "feature files are little-endian; add byte swapping before porting");

void put_u32(std::string& out, std::uint32_t v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    out.append(buf, 4);
}

void put_f32(std::string& out, float v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    out.append(buf, 4);
}

std::string fault_message(FeatureFileFault fault, const std::filesystem::path& path,
                          std::uint64_t offset, const std::string& detail) {
    const char* what = nullptr;
    switch (fault) {
        case FeatureFileFault::MissingFile: what = "missing file"; break;
        case FeatureFileFault::BadMagic: what = "bad magic"; break;
        case FeatureFileFault::BadVersion: what = "unsupported version"; break;
        case FeatureFileFault::Truncated: what = "truncated payload"; break;
        case FeatureFileFault::Unwritable: what = "unwritable path"; break;
    }
    std::ostringstream os;
    os << path.string() << ": " << what << " at byte " << offset;
    if (!detail.empty()) os << " (" << detail << ")";
    return os.str();
}

// Shortest round-trippable decimal for a double.
std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace

FeatureFileError::FeatureFileError(FeatureFileFault fault, const std::filesystem::path& path,
                                   std::uint64_t byte_offset, const std::string& detail)
    : std::runtime_error(fault_message(fault, path, byte_offset, detail)),
      fault_(fault),
      byte_offset_(byte_offset) {}

FeatureSet load_features(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FeatureFileError(FeatureFileFault::MissingFile, path, 0, "");

    char header[kFeatureFileHeaderBytes];
    in.read(header, sizeof(header));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(header)))
        throw FeatureFileError(FeatureFileFault::Truncated, path,
                               static_cast<std::uint64_t>(in.gcount()), "header");
    if (std::memcmp(header, kFeatureMagic, 4) != 0)
        throw FeatureFileError(FeatureFileFault::BadMagic, path, 0, "");

    std::uint32_t version = 0;
    std::uint32_t count = 0;
    std::memcpy(&version, header + 4, 4);
    std::memcpy(&count, header + 8, 4);
    if (version != kFeatureVersion)
        throw FeatureFileError(FeatureFileFault::BadVersion, path, 4,
                               "version " + std::to_string(version));

    FeatureSet fs;
    fs.keypoints.resize(count);
    fs.descriptors.resize(count);
    char record[kFeatureRecordBytes];
    for (std::uint32_t i = 0; i < count; ++i) {
        in.read(record, sizeof(record));
        if (in.gcount() != static_cast<std::streamsize>(sizeof(record))) {
            const std::uint64_t offset =
                kFeatureFileHeaderBytes + static_cast<std::uint64_t>(i) * kFeatureRecordBytes +
                static_cast<std::uint64_t>(in.gcount());
            throw FeatureFileError(FeatureFileFault::Truncated, path, offset,
                                   "record " + std::to_string(i) + " of " + std::to_string(count));
        }
        Keypoint& kp = fs.keypoints[i];
        std::memcpy(&kp.x, record + 0, 4);
        std::memcpy(&kp.y, record + 4, 4);
        std::memcpy(&kp.scale, record + 8, 4);
        std::memcpy(&kp.orientation, record + 12, 4);
        std::memcpy(fs.descriptors[i].data(), record + 16, kDescriptorDim);
    }
    return fs;
}

void save_features(const FeatureSet& fs, const std::filesystem::path& path) {
    if (fs.keypoints.size() != fs.descriptors.size())
        throw std::invalid_argument("feature set keypoint/descriptor length mismatch");

    std::string out;
    out.reserve(kFeatureFileHeaderBytes + fs.size() * kFeatureRecordBytes);
    out.append(kFeatureMagic, 4);
    put_u32(out, kFeatureVersion);
    put_u32(out, static_cast<std::uint32_t>(fs.size()));
    put_u32(out, 0);  // reserved
    for (std::size_t i = 0; i < fs.size(); ++i) {
        const Keypoint& kp = fs.keypoints[i];
        put_f32(out, kp.x);
        put_f32(out, kp.y);
        put_f32(out, kp.scale);
        put_f32(out, kp.orientation);
        out.append(reinterpret_cast<const char*>(fs.descriptors[i].data()), kDescriptorDim);
    }

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FeatureFileError(FeatureFileFault::Unwritable, path, 0, "");
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw FeatureFileError(FeatureFileFault::Unwritable, path, 0, "short write");
}

TopScaleSelection select_top_scale(const FeatureSet& fs, double fraction) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw std::invalid_argument("top-scale fraction must be in (0, 1]");

    const std::size_t n = fs.size();
    const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));

    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    // Largest scale first; equal scales keep the smaller original index.
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        return fs.keypoints[a].scale > fs.keypoints[b].scale;
    });
    order.resize(std::min(keep, n));
    std::sort(order.begin(), order.end());  // restore original relative order

    TopScaleSelection sel;
    sel.features.image_id = fs.image_id;
    sel.features.keypoints.reserve(order.size());
    sel.features.descriptors.reserve(order.size());
    sel.original_indices = order;
    for (std::uint32_t idx : order) {
        sel.features.keypoints.push_back(fs.keypoints[idx]);
        sel.features.descriptors.push_back(fs.descriptors[idx]);
    }
    return sel;
}

void save_matches(const std::string& image_id_i, const std::string& image_id_j,
                  const std::vector<MatchRecord>& matches, const std::filesystem::path& path) {
    std::string out;
    out += "# ";
    out += image_id_i;
    out += ' ';
    out += image_id_j;
    out += ' ';
    out += std::to_string(matches.size());
    out += '\n';
    for (const MatchRecord& m : matches) {
        out += std::to_string(m.query_index);
        out += ' ';
        out += std::to_string(m.train_index);
        out += ' ';
        out += format_double(m.distance_sq);
        out += '\n';
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FeatureFileError(FeatureFileFault::Unwritable, path, 0, "");
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw FeatureFileError(FeatureFileFault::Unwritable, path, 0, "short write");
}

MatchFileContents load_matches(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FeatureFileError(FeatureFileFault::MissingFile, path, 0, "");

    MatchFileContents contents;
    std::string line;
    if (!std::getline(in, line))
        throw std::runtime_error(path.string() + ": empty match file");
    std::istringstream header(line);
    std::string hash;
    std::size_t count = 0;
    if (!(header >> hash >> contents.image_id_i >> contents.image_id_j >> count) || hash != "#")
        throw std::runtime_error(path.string() + ": malformed match header: " + line);

    contents.matches.reserve(count);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        MatchRecord m;
        if (!(ls >> m.query_index >> m.train_index >> m.distance_sq))
            throw std::runtime_error(path.string() + ": malformed match line " +
                                     std::to_string(line_no) + ": " + line);
        contents.matches.push_back(m);
    }
    if (contents.matches.size() != count)
        throw std::runtime_error(path.string() + ": header count " + std::to_string(count) +
                                 " does not match " + std::to_string(contents.matches.size()) +
                                 " records");
    return contents;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FeatureFileError(FeatureFileFault::MissingFile, path, 0, "");

    const std::filesystem::path base = path.has_parent_path()
                                           ? path.parent_path()
                                           : std::filesystem::path(".");
    DatasetManifest manifest;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": expected image_id<TAB>path");
        ManifestEntry entry;
        entry.image_id = line.substr(0, tab);
        if (entry.image_id.find_first_of(" \t\r\n") != std::string::npos)
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": image id contains whitespace");
        std::string p = line.substr(tab + 1);
        if (!p.empty() && p.back() == '\r') p.pop_back();
        std::filesystem::path fp(p);
        entry.path = fp.is_absolute() ? fp : base / fp;
        manifest.entries.push_back(std::move(entry));
    }
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
        for (std::size_t j = i + 1; j < manifest.entries.size(); ++j)
            if (manifest.entries[i].image_id == manifest.entries[j].image_id)
                throw std::runtime_error(path.string() + ": duplicate image id '" +
                                         manifest.entries[i].image_id + "'");
    return manifest;
}

FeatureSet parse_text_keys(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FeatureFileError(FeatureFileFault::MissingFile, path, 0, "");

    std::size_t count = 0;
    std::size_t dim = 0;
    if (!(in >> count >> dim))
        throw std::runtime_error(path.string() + ": malformed key header");
    if (dim != kDescriptorDim)
        throw std::runtime_error(path.string() + ": key dimension " + std::to_string(dim) +
                                 ", expected " + std::to_string(kDescriptorDim));

    FeatureSet fs;
    fs.keypoints.reserve(count);
    fs.descriptors.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        float row = 0, col = 0, scale = 0, orientation = 0;
        if (!(in >> row >> col >> scale >> orientation))
            throw std::runtime_error(path.string() + ": truncated keypoint " + std::to_string(i));
        Descriptor d{};
        for (std::size_t c = 0; c < kDescriptorDim; ++c) {
            int v = 0;
            if (!(in >> v) || v < 0 || v > 255)
                throw std::runtime_error(path.string() + ": bad descriptor byte in point " +
                                         std::to_string(i));
            d[c] = static_cast<std::uint8_t>(v);
        }
        fs.keypoints.push_back(Keypoint{col, row, scale, orientation});
        fs.descriptors.push_back(d);
    }
    return fs;
}

}  // namespace cashash
