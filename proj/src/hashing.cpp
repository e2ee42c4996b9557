#include "cashash/hashing.hpp"

#include <cstring>
#include <fstream>
#include <random>
#include <string>

#include "cashash/rng.hpp"

namespace cashash {

namespace {

constexpr char kCacheMagic[4] = {'C', 'H', 'C', 'C'};
constexpr std::uint32_t kCacheVersion = 1;

// Long-code planes use a fixed sentinel stream id, so the ranking remap does
// not change when table_count does.
constexpr std::uint64_t kLongTableStream = 0xffffffffULL;

Hyperplane draw_plane(std::uint64_t seed, std::uint64_t table, std::uint64_t bit) {
    std::mt19937_64 rng(mix64(seed, table, bit));
    Hyperplane h;
    for (double& v : h) v = standard_normal(rng);
    return h;
}

}  // namespace

void validate(const FamilyParams& p) {
    if (p.short_bits < 1 || p.short_bits > 32)
        throw std::invalid_argument("short_bits must be in 1..32");
    if (p.long_bits <= p.short_bits || p.long_bits > kDescriptorDim)
        throw std::invalid_argument("long_bits must satisfy short_bits < long_bits <= 128");
    if (p.table_count < 1) throw std::invalid_argument("table_count must be >= 1");
}

HashFamily build_hash_family(const FamilyParams& params) {
    validate(params);
    HashFamily family;
    family.params = params;
    family.short_planes.reserve(static_cast<std::size_t>(params.table_count) * params.short_bits);
    for (std::uint32_t t = 0; t < params.table_count; ++t)
        for (std::uint32_t j = 0; j < params.short_bits; ++j)
            family.short_planes.push_back(draw_plane(params.seed, t, j));
    family.long_planes.reserve(params.long_bits);
    for (std::uint32_t j = 0; j < params.long_bits; ++j)
        family.long_planes.push_back(draw_plane(params.seed, kLongTableStream, j));
    return family;
}

void CenteringAccumulator::add(const FeatureSet& fs) {
    for (const Descriptor& d : fs.descriptors) {
        for (std::size_t c = 0; c < kDescriptorDim; ++c) sums[c] += d[c];
        ++count;
    }
}

void CenteringAccumulator::apply(HashFamily& family) const {
    if (count == 0) throw std::invalid_argument("set_centering: no descriptors");
    for (std::size_t c = 0; c < kDescriptorDim; ++c)
        family.centering[c] = static_cast<double>(sums[c]) / static_cast<double>(count);
    family.centering_set = true;
}

void set_centering(HashFamily& family, std::span<const FeatureSet> sets) {
    CenteringAccumulator acc;
    for (const FeatureSet& fs : sets) acc.add(fs);
    acc.apply(family);
}

std::array<double, kDescriptorDim> center_descriptor(const HashFamily& family,
                                                     const Descriptor& desc) {
    std::array<double, kDescriptorDim> c;
    for (std::size_t i = 0; i < kDescriptorDim; ++i)
        c[i] = static_cast<double>(desc[i]) - family.centering[i];
    return c;
}

std::uint32_t short_code_of(const HashFamily& family, std::uint32_t table,
                            std::span<const double> centered, int reduce_rounds) {
    std::uint32_t code = 0;
    for (std::uint32_t j = 0; j < family.params.short_bits; ++j) {
        const double d = reduce_dot<double>(centered, family.short_plane(table, j), reduce_rounds);
        if (d > 0.0) code |= (1u << j);
    }
    return code;
}

LongCode long_code_of(const HashFamily& family, std::span<const double> centered,
                      int reduce_rounds) {
    LongCode code;
    code.bits = static_cast<std::uint16_t>(family.params.long_bits);
    for (std::uint32_t j = 0; j < family.params.long_bits; ++j) {
        const double d = reduce_dot<double>(centered, family.long_planes[j], reduce_rounds);
        if (d > 0.0) code.words[j / 64] |= (std::uint64_t{1} << (j % 64));
    }
    return code;
}

ShortCodes short_codes(const HashFamily& family, const FeatureSet& fs, int reduce_rounds) {
    if (!family.centering_set)
        throw std::logic_error("short_codes: centering has not been set");
    ShortCodes out;
    out.short_bits = family.params.short_bits;
    out.table_count = family.params.table_count;
    out.point_count = static_cast<std::uint32_t>(fs.size());
    out.values.reserve(static_cast<std::size_t>(out.point_count) * out.table_count);
    for (const Descriptor& desc : fs.descriptors) {
        const auto centered = center_descriptor(family, desc);
        for (std::uint32_t t = 0; t < out.table_count; ++t)
            out.values.push_back(short_code_of(family, t, centered, reduce_rounds));
    }
    return out;
}

LongCodeSet long_codes(const HashFamily& family, const FeatureSet& fs, int reduce_rounds) {
    if (!family.centering_set)
        throw std::logic_error("long_codes: centering has not been set");
    LongCodeSet out;
    out.long_bits = family.params.long_bits;
    out.codes.reserve(fs.size());
    for (const Descriptor& desc : fs.descriptors) {
        const auto centered = center_descriptor(family, desc);
        out.codes.push_back(long_code_of(family, centered, reduce_rounds));
    }
    return out;
}

ImageCodes compute_codes(const HashFamily& family, const FeatureSet& fs, int reduce_rounds) {
    if (!family.centering_set)
        throw std::logic_error("compute_codes: centering has not been set");
    ImageCodes codes;
    codes.params = family.params;
    codes.shorts.short_bits = family.params.short_bits;
    codes.shorts.table_count = family.params.table_count;
    codes.shorts.point_count = static_cast<std::uint32_t>(fs.size());
    codes.shorts.values.reserve(fs.size() * family.params.table_count);
    codes.longs.long_bits = family.params.long_bits;
    codes.longs.codes.reserve(fs.size());
    // One centering pass per point shared by both code kinds.
    for (const Descriptor& desc : fs.descriptors) {
        const auto centered = center_descriptor(family, desc);
        for (std::uint32_t t = 0; t < family.params.table_count; ++t)
            codes.shorts.values.push_back(short_code_of(family, t, centered, reduce_rounds));
        codes.longs.codes.push_back(long_code_of(family, centered, reduce_rounds));
    }
    return codes;
}

std::uint64_t centering_fingerprint(const HashFamily& family) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : family.centering) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

namespace {

template <typename T>
void write_pod(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
bool read_pod(std::istream& in, T& v) {
    char buf[sizeof(T)];
    in.read(buf, sizeof(T));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) return false;
    std::memcpy(&v, buf, sizeof(T));
    return true;
}

}  // namespace

void save_code_cache(const ImageCodes& codes, std::uint64_t centering_fp,
                     const std::filesystem::path& path) {
    std::string out;
    out.append(kCacheMagic, 4);
    write_pod(out, kCacheVersion);
    write_pod(out, codes.params.short_bits);
    write_pod(out, codes.params.long_bits);
    write_pod(out, codes.params.table_count);
    write_pod(out, codes.params.seed);
    write_pod(out, centering_fp);
    write_pod(out, codes.shorts.point_count);
    write_pod(out, std::uint32_t{0});  // reserved
    for (std::uint32_t v : codes.shorts.values) write_pod(out, v);
    for (const LongCode& c : codes.longs.codes) {
        write_pod(out, c.words[0]);
        write_pod(out, c.words[1]);
    }

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FeatureFileError(FeatureFileFault::Unwritable, path, 0, "");
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw FeatureFileError(FeatureFileFault::Unwritable, path, 0, "short write");
}

bool read_code_cache_header(const std::filesystem::path& path, CodeCacheHeader& header) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, kCacheMagic, 4) != 0) return false;
    std::uint32_t version = 0, reserved = 0;
    if (!read_pod(in, version) || version != kCacheVersion) return false;
    if (!read_pod(in, header.params.short_bits)) return false;
    if (!read_pod(in, header.params.long_bits)) return false;
    if (!read_pod(in, header.params.table_count)) return false;
    if (!read_pod(in, header.params.seed)) return false;
    if (!read_pod(in, header.centering_fp)) return false;
    if (!read_pod(in, header.count)) return false;
    if (!read_pod(in, reserved)) return false;
    return true;
}

ImageCodes parse_code_cache(std::istream& in, const std::string& origin,
                            const FamilyParams& expected, std::uint64_t expected_centering_fp) {
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, kCacheMagic, 4) != 0)
        throw FeatureFileError(FeatureFileFault::BadMagic, origin, 0, "");

    CodeCacheHeader header;
    std::uint32_t version = 0, reserved = 0;
    if (!read_pod(in, version) || !read_pod(in, header.params.short_bits) ||
        !read_pod(in, header.params.long_bits) || !read_pod(in, header.params.table_count) ||
        !read_pod(in, header.params.seed) || !read_pod(in, header.centering_fp) ||
        !read_pod(in, header.count) || !read_pod(in, reserved))
        throw FeatureFileError(FeatureFileFault::Truncated, origin, 4, "cache header");
    if (version != kCacheVersion)
        throw FeatureFileError(FeatureFileFault::BadVersion, origin, 4, std::to_string(version));
    if (!(header.params == expected) || header.centering_fp != expected_centering_fp)
        throw std::runtime_error(origin + ": code cache parameters mismatch active config");

    ImageCodes codes;
    codes.params = header.params;
    codes.shorts.short_bits = header.params.short_bits;
    codes.shorts.table_count = header.params.table_count;
    codes.shorts.point_count = header.count;
    codes.shorts.values.resize(static_cast<std::size_t>(header.count) * header.params.table_count);
    codes.longs.long_bits = header.params.long_bits;
    codes.longs.codes.resize(header.count);
    for (std::uint32_t& v : codes.shorts.values)
        if (!read_pod(in, v))
            throw FeatureFileError(FeatureFileFault::Truncated, origin,
                                   static_cast<std::uint64_t>(in.tellg()), "short codes");
    for (LongCode& c : codes.longs.codes) {
        c.bits = static_cast<std::uint16_t>(header.params.long_bits);
        if (!read_pod(in, c.words[0]) || !read_pod(in, c.words[1]))
            throw FeatureFileError(FeatureFileFault::Truncated, origin,
                                   static_cast<std::uint64_t>(in.tellg()), "long codes");
    }
    return codes;
}

ImageCodes load_code_cache(const std::filesystem::path& path, const FamilyParams& expected,
                           std::uint64_t expected_centering_fp) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FeatureFileError(FeatureFileFault::MissingFile, path, 0, "");
    return parse_code_cache(in, path.string(), expected, expected_centering_fp);
}

}  // namespace cashash
