// cashash: batch front-end for cascade-hashing descriptor matching.
//
//   cashash hash MANIFEST [flags]          compute per-image code caches
//   cashash match MANIFEST [--guided]      write per-pair match files
//   cashash oracle MANIFEST                brute-force files + recall report
//   cashash bench-reduce                   time the reduction kernel per tail setting
//   cashash plan MANIFEST                  dump the block-pair schedule
//   cashash convert-keys IN OUT            text .key file -> binary feature file

#include <CLI11.hpp>
#include <cinttypes>
#include <cstdio>
#include <string>
#include <vector>

#include "cashash/engine.hpp"
#include "cashash/scheduler.hpp"

namespace {

using cashash::RunConfig;

struct Assignment {
    std::string key;
    std::string value;
};

// Every knob is registered as a deferred key=value assignment so the config
// file applies first and explicit flags override it.
void add_config_flags(CLI::App* cmd, std::vector<Assignment>& overrides) {
    static const char* keys[] = {
        "out_dir", "cache_dir", "short_bits", "long_bits", "tables", "seed", "top_k",
        "hamming_threshold", "ratio", "min_candidates_for_ratio", "reduce_rounds",
        "seed_fraction", "ransac_iterations", "ransac_inlier_px", "ransac_confidence",
        "epipolar_band_px", "block_images", "blocks_per_group", "workers", "memory_budget_mb"};
    for (const char* key : keys) {
        cmd->add_option_function<std::string>(
            std::string("--") + key,
            [key, &overrides](const std::string& value) {
                overrides.push_back({key, value});
            });
    }
}

RunConfig build_config(const std::string& manifest, const std::string& config_file,
                       const std::vector<Assignment>& overrides) {
    RunConfig cfg;
    if (!config_file.empty()) cashash::apply_config_file(cfg, config_file);
    for (const Assignment& a : overrides) cashash::apply_config_entry(cfg, a.key, a.value);
    if (!manifest.empty()) cfg.manifest = manifest;
    cashash::validate(cfg);
    return cfg;
}

void print_failures(const std::vector<std::string>& failures) {
    for (const std::string& f : failures) std::fprintf(stderr, "error: %s\n", f.c_str());
}

int cmd_hash(const RunConfig& cfg, bool csv) {
    const cashash::HashSummary s = cashash::run_hash(cfg);
    if (csv) {
        std::printf("images,written,cached,failed,seconds\n%zu,%zu,%zu,%zu,%.3f\n", s.images,
                    s.written, s.cached, s.failures.size(), s.elapsed_s);
    } else {
        std::printf("hash: %zu images, %zu caches written, %zu cached, %zu failed, %.3f s\n",
                    s.images, s.written, s.cached, s.failures.size(), s.elapsed_s);
    }
    print_failures(s.failures);
    return s.failures.empty() ? 0 : 1;
}

int cmd_match(const RunConfig& cfg, bool guided, bool csv) {
    const auto mode = guided ? cashash::MatchMode::Guided : cashash::MatchMode::Exhaustive;
    const cashash::RunSummary s = cashash::run_match(cfg, mode);
    if (csv) {
        std::printf("mode,images,pairs_planned,pairs_matched,matches,accepted,seconds,pairs_per_s\n");
        std::printf("%s,%zu,%zu,%zu,%zu,%zu,%.3f,%.2f\n", guided ? "guided" : "exhaustive",
                    s.image_count, s.pairs_planned, s.pairs_matched, s.total_matches,
                    s.accepted_pairs, s.timings.match_s, s.pairs_per_s);
    } else {
        std::printf("%-12s %8s %10s %10s %10s\n", "stage", "pairs", "time(s)", "pairs/s",
                    "matches");
        std::printf("%-12s %8zu %10.3f %10s %10s\n", "hash", s.image_count, s.timings.hash_s,
                    "-", "-");
        if (guided) {
            std::printf("%-12s %8zu %10.3f %10s %10s\n", "seed", s.seed_pairs,
                        s.timings.seed_s + s.timings.estimate_s, "-", "-");
            std::printf("guided matching %zu pairs (gate passed %zu of %zu)\n",
                        s.pairs_planned, s.accepted_pairs, s.seed_pairs);
        }
        std::printf("%-12s %8zu %10.3f %10.2f %10zu\n", guided ? "guided" : "exhaustive",
                    s.pairs_matched, s.timings.match_s, s.pairs_per_s, s.total_matches);
        std::printf("%-12s %8s %10.3f\n", "io", "-", s.timings.io_s);
    }
    print_failures(s.failures);
    return s.failures.empty() ? 0 : 1;
}

int cmd_oracle(const RunConfig& cfg, bool csv) {
    const cashash::OracleSummary s = cashash::run_oracle(cfg);
    if (csv) {
        std::printf("pairs,oracle,cascade,agreed,recall,precision,seconds\n");
        std::printf("%zu,%zu,%zu,%zu,%.6f,%.6f,%.3f\n", s.pairs, s.oracle_matches,
                    s.cascade_matches, s.agreeing_matches, s.recall, s.precision, s.elapsed_s);
    } else {
        std::printf("oracle: %zu pairs, %zu oracle matches, %zu cascade matches\n", s.pairs,
                    s.oracle_matches, s.cascade_matches);
        std::printf("recall %.4f precision %.4f (%.3f s)\n", s.recall, s.precision, s.elapsed_s);
    }
    print_failures(s.failures);
    return s.failures.empty() ? 0 : 1;
}

int cmd_bench_reduce(const RunConfig& cfg) {
    const auto rows = cashash::bench_reduce(cfg.seed);
    std::printf("reduce_rounds,ns_per_op,checksum\n");
    bool consistent = true;
    for (const auto& row : rows) {
        std::printf("%d,%.2f,%.17g\n", row.reduce_rounds, row.ns_per_op, row.checksum);
        consistent &= row.checksum == rows.front().checksum;
    }
    if (!consistent) {
        std::fprintf(stderr, "error: reduction results differ across tail settings\n");
        return 1;
    }
    return 0;
}

int cmd_plan(const RunConfig& cfg, bool dump_pairs) {
    const cashash::DatasetManifest manifest = cashash::load_manifest(cfg.manifest);
    std::uint32_t block_images = cfg.block_images ? cfg.block_images : 2;
    std::uint32_t blocks_per_group = cfg.blocks_per_group ? cfg.blocks_per_group : 2;
    const cashash::Partition partition =
        cashash::make_partition(manifest, block_images, blocks_per_group);
    const cashash::PairPlan plan = cashash::plan_exhaustive(partition);
    std::printf("images %u blocks %u groups %u tasks %zu pairs %zu\n", partition.image_count,
                partition.block_count(), partition.group_count(), plan.tasks.size(),
                plan.pair_count());
    for (std::size_t t = 0; t < plan.tasks.size(); ++t) {
        const cashash::PlanTask& task = plan.tasks[t];
        std::printf("task %4zu  G(%u,%u)  B(%u,%u)  pairs %zu\n", t, task.group_a, task.group_b,
                    task.block_a, task.block_b, task.pairs.size());
        if (dump_pairs)
            for (const auto& [a, b] : task.pairs) std::printf("  %u %u\n", a, b);
    }
    return 0;
}

int cmd_convert_keys(const std::string& input, const std::string& output,
                     const std::string& image_id) {
    cashash::FeatureSet fs = cashash::parse_text_keys(input);
    fs.image_id = image_id;
    cashash::save_features(fs, output);
    std::printf("converted %zu keypoints: %s -> %s\n", fs.size(), input.c_str(), output.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cascade-hashing descriptor matcher"};
    app.require_subcommand(1);

    std::string manifest, config_file, key_in, key_out, image_id = "converted";
    std::vector<Assignment> overrides;
    bool guided = false, csv = false, dump_pairs = false;

    const auto add_common = [&](CLI::App* cmd, bool with_manifest) {
        if (with_manifest)
            cmd->add_option("manifest", manifest, "dataset manifest (image_id<TAB>path)");
        cmd->add_option("--config", config_file, "key = value config file");
        add_config_flags(cmd, overrides);
        return cmd;
    };

    CLI::App* hash = add_common(app.add_subcommand("hash", "compute code caches"), true);
    CLI::App* match = add_common(app.add_subcommand("match", "match image pairs"), true);
    match->add_flag("--guided", guided, "two-stage geometry-guided matching");
    match->add_flag("--csv", csv, "CSV summary");
    hash->add_flag("--csv", csv, "CSV summary");
    CLI::App* oracle = add_common(app.add_subcommand("oracle", "brute-force oracle run"), true);
    oracle->add_flag("--csv", csv, "CSV summary");
    CLI::App* bench =
        add_common(app.add_subcommand("bench-reduce", "time the reduction kernel"), false);
    CLI::App* plan = add_common(app.add_subcommand("plan", "dump the pair schedule"), true);
    plan->add_flag("--pairs", dump_pairs, "also list image pairs per task");
    CLI::App* convert = app.add_subcommand("convert-keys", "text keys -> feature file");
    convert->add_option("input", key_in)->required();
    convert->add_option("output", key_out)->required();
    convert->add_option("--image-id", image_id);

    CLI11_PARSE(app, argc, argv);

    try {
        if (convert->parsed()) return cmd_convert_keys(key_in, key_out, image_id);
        const RunConfig cfg = build_config(manifest, config_file, overrides);
        if (hash->parsed()) return cmd_hash(cfg, csv);
        if (match->parsed()) return cmd_match(cfg, guided, csv);
        if (oracle->parsed()) return cmd_oracle(cfg, csv);
        if (bench->parsed()) return cmd_bench_reduce(cfg);
        if (plan->parsed()) return cmd_plan(cfg, dump_pairs);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
