#include "cashash/config.hpp"

#include <charconv>
#include <fstream>
#include <stdexcept>

namespace cashash {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* begin = value.data();
    const char* end = begin + value.size();
    const auto res = std::from_chars(begin, end, out);
    if (res.ec != std::errc{} || res.ptr != end)
        throw std::invalid_argument("config: bad value for '" + key + "': " + value);
    return out;
}

double parse_real(const std::string& key, const std::string& value) {
    return parse_number<double>(key, value);
}

}  // namespace

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "manifest") cfg.manifest = value;
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "cache_dir") cfg.cache_dir = value;
    else if (key == "short_bits") cfg.short_bits = parse_number<std::uint32_t>(key, value);
    else if (key == "long_bits") cfg.long_bits = parse_number<std::uint32_t>(key, value);
    else if (key == "tables") cfg.tables = parse_number<std::uint32_t>(key, value);
    else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "top_k") cfg.top_k = parse_number<std::uint32_t>(key, value);
    else if (key == "hamming_threshold") cfg.hamming_threshold = parse_number<std::uint32_t>(key, value);
    else if (key == "ratio") cfg.ratio = parse_real(key, value);
    else if (key == "min_candidates_for_ratio")
        cfg.min_candidates_for_ratio = parse_number<std::uint32_t>(key, value);
    else if (key == "reduce_rounds") cfg.reduce_rounds = parse_number<int>(key, value);
    else if (key == "seed_fraction") cfg.seed_fraction = parse_real(key, value);
    else if (key == "ransac_iterations") cfg.ransac_iterations = parse_number<int>(key, value);
    else if (key == "ransac_inlier_px") cfg.ransac_inlier_px = parse_real(key, value);
    else if (key == "ransac_confidence") cfg.ransac_confidence = parse_real(key, value);
    else if (key == "epipolar_band_px") cfg.epipolar_band_px = parse_real(key, value);
    else if (key == "block_images") cfg.block_images = parse_number<std::uint32_t>(key, value);
    else if (key == "blocks_per_group")
        cfg.blocks_per_group = parse_number<std::uint32_t>(key, value);
    else if (key == "workers") cfg.workers = parse_number<std::uint32_t>(key, value);
    else if (key == "memory_budget_mb")
        cfg.memory_budget_mb = parse_number<std::uint64_t>(key, value);
    else throw std::invalid_argument("config: unknown key '" + key + "'");
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) +
                                        ": expected key = value");
        apply_config_entry(cfg, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
    }
}

void validate(const RunConfig& cfg) {
    validate(cfg.family_params());
    validate(cfg.match_config(), cfg.long_bits);
    if (!(cfg.seed_fraction > 0.0) || cfg.seed_fraction > 1.0)
        throw std::invalid_argument("seed_fraction must be in (0, 1]");
    if (cfg.ransac_iterations < 1)
        throw std::invalid_argument("ransac_iterations must be >= 1");
    if (!(cfg.ransac_inlier_px > 0.0))
        throw std::invalid_argument("ransac_inlier_px must be > 0");
    if (!(cfg.ransac_confidence > 0.0 && cfg.ransac_confidence < 1.0))
        throw std::invalid_argument("ransac_confidence must be in (0, 1)");
    if (cfg.epipolar_band_px < 0.0)
        throw std::invalid_argument("epipolar_band_px must be >= 0");
    if (cfg.memory_budget_mb == 0)
        throw std::invalid_argument("memory_budget_mb must be > 0");
}

}  // namespace cashash
