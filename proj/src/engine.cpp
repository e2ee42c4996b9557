#include "cashash/engine.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <cstring>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>
#include <tuple>
#include <unordered_map>

#include "cashash/geometry.hpp"
#include "cashash/rng.hpp"
#include "cashash/scheduler.hpp"

namespace cashash {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

// Aggregate CPU-time counter shared across workers.
class TimeCounter {
public:
    void add(double s) { nanos_.fetch_add(static_cast<std::uint64_t>(s * 1e9)); }
    double seconds() const { return static_cast<double>(nanos_.load()) * 1e-9; }

private:
    std::atomic<std::uint64_t> nanos_{0};
};

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t pair_seed(std::uint64_t seed, std::uint32_t i, std::uint32_t j) {
    return mix64(seed ^ 0x67656f6dULL, i, j);
}

// ---------------------------------------------------------------------------
// Worker pool with per-worker FIFO lanes; tasks are sharded round-robin in
// plan order, so lane w receives exactly the tasks assign_workers gives it.

class WorkerPool {
public:
    explicit WorkerPool(std::uint32_t workers) : lanes_(workers) {
        threads_.reserve(workers);
        for (std::uint32_t w = 0; w < workers; ++w)
            threads_.emplace_back([this, w] { run(w); });
    }

    ~WorkerPool() {
        {
            std::lock_guard lock(mutex_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    void submit(std::uint32_t worker, std::function<void()> fn) {
        {
            std::lock_guard lock(mutex_);
            lanes_[worker % lanes_.size()].push_back(std::move(fn));
            ++pending_;
        }
        cv_.notify_all();
    }

    void wait_idle() {
        std::unique_lock lock(mutex_);
        idle_cv_.wait(lock, [this] { return pending_ == 0; });
    }

private:
    void run(std::uint32_t w) {
        for (;;) {
            std::function<void()> fn;
            {
                std::unique_lock lock(mutex_);
                cv_.wait(lock, [this, w] { return stop_ || !lanes_[w].empty(); });
                if (lanes_[w].empty()) {
                    if (stop_) return;
                    continue;
                }
                fn = std::move(lanes_[w].front());
                lanes_[w].pop_front();
            }
            fn();
            {
                std::lock_guard lock(mutex_);
                if (--pending_ == 0) idle_cv_.notify_all();
            }
        }
    }

    std::vector<std::deque<std::function<void()>>> lanes_;
    std::vector<std::thread> threads_;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::condition_variable idle_cv_;
    std::size_t pending_ = 0;
    bool stop_ = false;
};

// ---------------------------------------------------------------------------
// Asynchronous match sink: matching threads enqueue completed pairs tagged
// by pair id and never wait on the disk; a single writer drains the queue,
// so each output file is written by exactly one thread.

struct PairMatches {
    std::uint32_t image_i = 0;
    std::uint32_t image_j = 0;
    std::string id_i;
    std::string id_j;
    std::string file_name;
    std::vector<MatchRecord> records;
};

class FileMatchSink {
public:
    explicit FileMatchSink(std::filesystem::path dir)
        : dir_(std::move(dir)), writer_([this] { run(); }) {}

    ~FileMatchSink() {
        if (writer_.joinable()) finish();
    }

    void accept(PairMatches result) {
        {
            std::lock_guard lock(mutex_);
            queue_.push_back(std::move(result));
        }
        cv_.notify_one();
    }

    void finish() {
        {
            std::lock_guard lock(mutex_);
            done_ = true;
        }
        cv_.notify_one();
        writer_.join();
    }

    double io_seconds() const { return io_.seconds(); }

    std::vector<std::string> take_failures() {
        std::lock_guard lock(mutex_);
        return std::move(failures_);
    }

private:
    void run() {
        for (;;) {
            PairMatches item;
            {
                std::unique_lock lock(mutex_);
                cv_.wait(lock, [this] { return done_ || !queue_.empty(); });
                if (queue_.empty()) {
                    if (done_) return;
                    continue;
                }
                item = std::move(queue_.front());
                queue_.pop_front();
            }
            const auto start = Clock::now();
            try {
                save_matches(item.id_i, item.id_j, item.records, dir_ / item.file_name);
            } catch (const std::exception& e) {
                std::lock_guard lock(mutex_);
                failures_.emplace_back(e.what());
            }
            io_.add(seconds_since(start));
        }
    }

    std::filesystem::path dir_;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<PairMatches> queue_;
    std::vector<std::string> failures_;
    bool done_ = false;
    TimeCounter io_;
    std::thread writer_;
};

// ---------------------------------------------------------------------------
// Three-level data store driven by the residency trace. The loader lane
// executes group loads (disk -> memory: raw file bytes), block loads
// (memory -> arena: parsed features/codes) and evictions, running ahead of
// the compute lanes; eviction of a block waits until every task reading it
// has finished.

enum LoadFlags : unsigned {
    kLoadFeatures = 1u,
    kLoadCodes = 2u,
    kLoadSeedSubset = 4u,
};

struct ArenaImage {
    bool valid = false;
    FeatureSet features;
    ImageCodes codes;
    TopScaleSelection seed_selection;
    ImageCodes seed_codes;
};

struct ArenaBlock {
    std::uint32_t first_image = 0;
    std::vector<ArenaImage> images;

    const ArenaImage& image(std::uint32_t global_index) const {
        return images[global_index - first_image];
    }
};

struct DatasetContext {
    RunConfig cfg;
    DatasetManifest manifest;
    Partition partition;
    HashFamily family;
    std::uint64_t centering_fp = 0;
    std::vector<std::uint32_t> descriptor_counts;  // per image, from the centering pass
};

class ResidencyDriver {
public:
    ResidencyDriver(const DatasetContext& ctx, std::vector<ResidencyTask> tasks,
                    ResidencyMode mode, unsigned flags)
        : ctx_(ctx), tasks_(std::move(tasks)), flags_(flags) {
        trace_ = simulate_residency(tasks_, mode);
    }

    ~ResidencyDriver() {
        if (loader_.joinable()) loader_.join();
    }

    void start() {
        loader_ = std::thread([this] { run(); });
    }

    const ArenaBlock* acquire(std::uint32_t block) {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return blocks_.count(block) && blocks_.at(block).resident; });
        BlockEntry& entry = blocks_.at(block);
        ++entry.pins;
        return &entry.data;
    }

    void release(std::uint32_t block) {
        {
            std::lock_guard lock(mutex_);
            --blocks_.at(block).pins;
        }
        cv_.notify_all();
    }

    // Lets the loader move past the Begin marker of this task; called once
    // the coordinator holds pins on the task's blocks, so later evictions in
    // the trace cannot outrun the compute lane.
    void mark_dispatched(std::uint32_t task_index) {
        {
            std::lock_guard lock(mutex_);
            dispatched_ = std::max(dispatched_, task_index + 1);
        }
        cv_.notify_all();
    }

    double io_seconds() const { return io_.seconds(); }

    std::vector<std::string> take_failures() {
        std::lock_guard lock(mutex_);
        return std::move(failures_);
    }

private:
    struct GroupData {
        // One blob per image of the group, in block order; empty on read error.
        std::unordered_map<std::uint32_t, std::string> feature_bytes;
        std::unordered_map<std::uint32_t, std::string> cache_bytes;
    };

    struct BlockEntry {
        ArenaBlock data;
        std::uint32_t pins = 0;
        bool resident = false;
    };

    void note_failure(const std::string& msg) {
        std::lock_guard lock(mutex_);
        failures_.push_back(msg);
    }

    static std::string read_file(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error(path.string() + ": cannot open");
        std::ostringstream ss;
        ss << in.rdbuf();
        return std::move(ss).str();
    }

    void load_group(std::uint32_t group) {
        const auto start = Clock::now();
        GroupData data;
        for (std::uint32_t block : ctx_.partition.group_blocks[group]) {
            const auto [first, last] = ctx_.partition.block_ranges[block];
            for (std::uint32_t img = first; img < last; ++img) {
                const ManifestEntry& entry = ctx_.manifest.entries[img];
                try {
                    data.feature_bytes[img] = read_file(entry.path);
                } catch (const std::exception& e) {
                    note_failure(e.what());
                    data.feature_bytes[img] = {};
                }
                if (flags_ & kLoadCodes) {
                    const auto cache = code_cache_path(ctx_.cfg.effective_cache_dir(),
                                                       entry.image_id);
                    try {
                        data.cache_bytes[img] = read_file(cache);
                    } catch (const std::exception& e) {
                        note_failure(e.what());
                        data.cache_bytes[img] = {};
                    }
                }
            }
        }
        io_.add(seconds_since(start));
        std::lock_guard lock(mutex_);
        groups_[group] = std::move(data);
    }

    ArenaImage parse_image(const GroupData& group, std::uint32_t img) {
        ArenaImage out;
        const ManifestEntry& entry = ctx_.manifest.entries[img];
        const std::string& blob = group.feature_bytes.at(img);
        if (blob.empty()) return out;  // read failure already recorded
        try {
            out.features = parse_features_blob(blob, entry.path.string());
            out.features.image_id = entry.image_id;
        } catch (const std::exception& e) {
            note_failure(e.what());
            return out;
        }
        try {
            if (flags_ & kLoadCodes) {
                std::istringstream cin_(group.cache_bytes.at(img), std::ios::binary);
                out.codes = parse_code_cache(cin_, entry.image_id, ctx_.cfg.family_params(),
                                             ctx_.centering_fp);
                if (out.codes.shorts.point_count != out.features.size())
                    throw std::runtime_error(entry.image_id + ": cache/feature count mismatch");
            }
            if (flags_ & kLoadSeedSubset) {
                out.seed_selection = select_top_scale(out.features, ctx_.cfg.seed_fraction);
                out.seed_codes = compute_codes(ctx_.family, out.seed_selection.features,
                                               ctx_.cfg.reduce_rounds);
            }
        } catch (const std::exception& e) {
            note_failure(e.what());
            return out;
        }
        out.valid = true;
        return out;
    }

    // Feature parsing from an in-memory blob; same format as load_features.
    static FeatureSet parse_features_blob(const std::string& blob, const std::string& origin);

    void load_block(std::uint32_t block) {
        const GroupData* group_data = nullptr;
        {
            std::lock_guard lock(mutex_);
            group_data = &groups_.at(ctx_.partition.block_group_of[block]);
        }
        BlockEntry entry;
        const auto [first, last] = ctx_.partition.block_ranges[block];
        entry.data.first_image = first;
        entry.data.images.reserve(last - first);
        for (std::uint32_t img = first; img < last; ++img)
            entry.data.images.push_back(parse_image(*group_data, img));
        entry.resident = true;
        {
            std::lock_guard lock(mutex_);
            blocks_[block] = std::move(entry);
        }
        cv_.notify_all();
    }

    void run() {
        for (const ResidencyAction& action : trace_) {
            switch (action.kind) {
                case ActionKind::Load:
                    if (action.level == ResidencyLevel::Group)
                        load_group(action.id);
                    else
                        load_block(action.id);
                    break;
                case ActionKind::Evict:
                    if (action.level == ResidencyLevel::Group) {
                        std::lock_guard lock(mutex_);
                        groups_.erase(action.id);
                    } else {
                        std::unique_lock lock(mutex_);
                        cv_.wait(lock, [&] { return blocks_.at(action.id).pins == 0; });
                        blocks_.erase(action.id);
                    }
                    break;
                case ActionKind::Begin: {
                    std::unique_lock lock(mutex_);
                    cv_.wait(lock, [&] { return dispatched_ > action.id; });
                    break;
                }
                case ActionKind::Finish:
                    break;  // pins keep evictions honest; nothing to do here
            }
        }
    }

    const DatasetContext& ctx_;
    std::vector<ResidencyTask> tasks_;
    unsigned flags_;
    std::vector<ResidencyAction> trace_;
    std::unordered_map<std::uint32_t, GroupData> groups_;
    std::unordered_map<std::uint32_t, BlockEntry> blocks_;
    std::uint32_t dispatched_ = 0;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::vector<std::string> failures_;
    TimeCounter io_;
    std::thread loader_;
};

FeatureSet ResidencyDriver::parse_features_blob(const std::string& blob,
                                                const std::string& origin) {
    // Delegate to the canonical reader through a temp-free path: the blob is
    // already in memory, so reparse it directly.
    if (blob.size() < kFeatureFileHeaderBytes)
        throw FeatureFileError(FeatureFileFault::Truncated, origin, blob.size(), "header");
    if (std::memcmp(blob.data(), "CHFT", 4) != 0)
        throw FeatureFileError(FeatureFileFault::BadMagic, origin, 0, "");
    std::uint32_t version = 0, count = 0;
    std::memcpy(&version, blob.data() + 4, 4);
    std::memcpy(&count, blob.data() + 8, 4);
    if (version != 1)
        throw FeatureFileError(FeatureFileFault::BadVersion, origin, 4, std::to_string(version));
    const std::size_t expected =
        kFeatureFileHeaderBytes + static_cast<std::size_t>(count) * kFeatureRecordBytes;
    if (blob.size() < expected)
        throw FeatureFileError(FeatureFileFault::Truncated, origin, blob.size(), "payload");

    FeatureSet fs;
    fs.keypoints.resize(count);
    fs.descriptors.resize(count);
    const char* p = blob.data() + kFeatureFileHeaderBytes;
    for (std::uint32_t i = 0; i < count; ++i, p += kFeatureRecordBytes) {
        std::memcpy(&fs.keypoints[i].x, p + 0, 4);
        std::memcpy(&fs.keypoints[i].y, p + 4, 4);
        std::memcpy(&fs.keypoints[i].scale, p + 8, 4);
        std::memcpy(&fs.keypoints[i].orientation, p + 12, 4);
        std::memcpy(fs.descriptors[i].data(), p + 16, kDescriptorDim);
    }
    return fs;
}

// ---------------------------------------------------------------------------
// Shared setup

std::uint32_t resolve_workers(const RunConfig& cfg) {
    if (cfg.workers > 0) return cfg.workers;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : hw;
}

Partition resolve_partition(const RunConfig& cfg, const DatasetManifest& manifest) {
    std::uint32_t block_images = cfg.block_images;
    std::uint32_t blocks_per_group = cfg.blocks_per_group;
    if (block_images == 0 || blocks_per_group == 0) {
        std::uint64_t total_bytes = 0;
        std::uint64_t counted = 0;
        for (const ManifestEntry& entry : manifest.entries) {
            std::error_code ec;
            const auto size = std::filesystem::file_size(entry.path, ec);
            if (!ec) {
                total_bytes += size;
                ++counted;
            }
        }
        const std::uint64_t mean = counted ? total_bytes / counted : 1;
        const PartitionSizing sizing =
            auto_partition_sizing(mean, cfg.memory_budget_mb * 1024 * 1024);
        if (block_images == 0) block_images = sizing.block_images;
        if (blocks_per_group == 0) blocks_per_group = sizing.blocks_per_group;
    }
    return make_partition(manifest, block_images, blocks_per_group);
}

constexpr char kCenteringMagic[4] = {'C', 'H', 'C', 'V'};

void save_centering_file(const DatasetContext& ctx, const std::filesystem::path& path) {
    std::string out;
    out.append(kCenteringMagic, 4);
    const FamilyParams p = ctx.cfg.family_params();
    const auto put = [&out](const void* data, std::size_t n) {
        out.append(static_cast<const char*>(data), n);
    };
    std::uint32_t version = 1;
    put(&version, 4);
    put(&p.short_bits, 4);
    put(&p.long_bits, 4);
    put(&p.table_count, 4);
    put(&p.seed, 8);
    put(ctx.family.centering.data(), sizeof(ctx.family.centering));
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FeatureFileError(FeatureFileFault::Unwritable, path, 0, "");
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
}

// Streams every feature file once: exact centering sums, per-image
// descriptor counts. Unreadable files are reported and skipped.
void centering_pass(DatasetContext& ctx, std::vector<std::string>& failures) {
    CenteringAccumulator acc;
    ctx.descriptor_counts.assign(ctx.manifest.size(), 0);
    for (std::size_t i = 0; i < ctx.manifest.size(); ++i) {
        try {
            const FeatureSet fs = load_features(ctx.manifest.entries[i].path);
            ctx.descriptor_counts[i] = static_cast<std::uint32_t>(fs.size());
            acc.add(fs);
        } catch (const std::exception& e) {
            failures.emplace_back(e.what());
        }
    }
    acc.apply(ctx.family);  // throws when the dataset has no descriptors
    ctx.centering_fp = centering_fingerprint(ctx.family);
}

DatasetContext make_context(const RunConfig& cfg) {
    validate(cfg);
    DatasetContext ctx;
    ctx.cfg = cfg;
    if (cfg.manifest.empty()) throw std::invalid_argument("no manifest configured");
    ctx.manifest = load_manifest(cfg.manifest);
    if (ctx.manifest.size() == 0) throw std::runtime_error("empty manifest");
    ctx.partition = resolve_partition(cfg, ctx.manifest);
    ctx.family = build_hash_family(cfg.family_params());
    return ctx;
}

// True when the image's cache file exists and echoes the active family,
// centering and point count.
bool cache_is_current(const DatasetContext& ctx, std::size_t image) {
    const auto path = code_cache_path(ctx.cfg.effective_cache_dir(),
                                      ctx.manifest.entries[image].image_id);
    CodeCacheHeader header;
    if (!read_code_cache_header(path, header)) return false;
    return header.params == ctx.cfg.family_params() && header.centering_fp == ctx.centering_fp &&
           header.count == ctx.descriptor_counts[image];
}

// Hash pipeline body: assumes centering is known; walks blocks through the
// two-slot hashing schedule, recomputing stale caches.
void hash_blocks(DatasetContext& ctx, HashSummary& summary) {
    const auto cache_dir = ctx.cfg.effective_cache_dir();
    std::filesystem::create_directories(cache_dir);
    save_centering_file(ctx, cache_dir / "centering.chcv");

    std::vector<std::uint8_t> current(ctx.manifest.size(), 0);
    for (std::size_t i = 0; i < ctx.manifest.size(); ++i)
        current[i] = cache_is_current(ctx, i) ? 1 : 0;

    const auto tasks = hashing_residency_tasks(ctx.partition);
    ResidencyDriver driver(ctx, tasks, ResidencyMode::Hashing, kLoadFeatures);
    driver.start();

    const std::uint32_t workers = resolve_workers(ctx.cfg);
    WorkerPool pool(workers);
    std::mutex failure_mutex;
    std::atomic<std::size_t> written{0};

    for (std::uint32_t t = 0; t < tasks.size(); ++t) {
        const std::uint32_t block = tasks[t].blocks[0];
        const ArenaBlock* data = driver.acquire(block);
        driver.mark_dispatched(t);
        const auto [first, last] = ctx.partition.block_ranges[block];
        std::atomic<std::uint32_t> remaining{0};
        std::mutex done_mutex;
        std::condition_variable done_cv;
        for (std::uint32_t img = first; img < last; ++img) {
            if (current[img]) {
                ++summary.cached;
                continue;
            }
            if (!data->image(img).valid) continue;  // load failure already recorded
            ++remaining;
            pool.submit(img % workers, [&, img] {
                try {
                    const ImageCodes codes = compute_codes(ctx.family, data->image(img).features,
                                                           ctx.cfg.reduce_rounds);
                    save_code_cache(codes, ctx.centering_fp,
                                    code_cache_path(cache_dir,
                                                    ctx.manifest.entries[img].image_id));
                    ++written;
                } catch (const std::exception& e) {
                    std::lock_guard lock(failure_mutex);
                    summary.failures.emplace_back(e.what());
                }
                if (--remaining == 0) {
                    std::lock_guard lock(done_mutex);
                    done_cv.notify_all();
                }
            });
        }
        {
            std::unique_lock lock(done_mutex);
            done_cv.wait(lock, [&] { return remaining.load() == 0; });
        }
        driver.release(block);
    }
    pool.wait_idle();
    summary.written = written.load();
    for (auto& f : driver.take_failures()) summary.failures.push_back(std::move(f));
}

// Makes sure every image has a current code cache; runs the hash pipeline
// when anything is stale. Returns the hash-stage wall time.
double ensure_codes(DatasetContext& ctx, std::vector<std::string>& failures) {
    const auto start = Clock::now();
    centering_pass(ctx, failures);  // also fixes the expected fingerprint

    bool all_current = true;
    for (std::size_t i = 0; all_current && i < ctx.manifest.size(); ++i)
        all_current = cache_is_current(ctx, i);
    if (!all_current) {
        HashSummary hs;
        hash_blocks(ctx, hs);
        for (auto& f : hs.failures) failures.push_back(std::move(f));
    }
    return seconds_since(start);
}

// Runs `fn` for every task of the plan on the round-robin worker, with the
// task's two blocks pinned in the arena for the duration of the call.
void execute_plan(const DatasetContext& ctx, const PairPlan& plan, unsigned flags,
                  const std::function<void(const PlanTask&, const ArenaBlock&,
                                           const ArenaBlock&)>& fn,
                  std::vector<std::string>& failures, double* io_seconds) {
    const auto tasks = residency_tasks(plan);
    ResidencyDriver driver(ctx, tasks, ResidencyMode::Matching, flags);
    driver.start();

    const std::uint32_t workers = resolve_workers(ctx.cfg);
    std::mutex failure_mutex;
    {
        WorkerPool pool(workers);
        for (std::uint32_t t = 0; t < plan.tasks.size(); ++t) {
            const PlanTask& task = plan.tasks[t];
            const ArenaBlock* a = driver.acquire(task.block_a);
            const ArenaBlock* b = task.block_b == task.block_a
                                      ? a
                                      : driver.acquire(task.block_b);
            driver.mark_dispatched(t);
            pool.submit(t % workers, [&, a, b, t] {
                const PlanTask& pt = plan.tasks[t];
                try {
                    fn(pt, *a, *b);
                } catch (const std::exception& e) {
                    std::lock_guard lock(failure_mutex);
                    failures.emplace_back(e.what());
                }
                driver.release(pt.block_a);
                if (pt.block_b != pt.block_a) driver.release(pt.block_b);
            });
        }
        pool.wait_idle();
    }
    if (io_seconds) *io_seconds += driver.io_seconds();
    for (auto& f : driver.take_failures()) failures.push_back(std::move(f));
}

std::string geometry_report_line(const DatasetContext& ctx, std::uint32_t i, std::uint32_t j,
                                 const TwoViewGeometry& geom) {
    std::string line = ctx.manifest.entries[i].image_id;
    line += ' ';
    line += ctx.manifest.entries[j].image_id;
    line += geom.accepted ? " 1 " : " 0 ";
    line += std::to_string(geom.seed_match_count);
    line += ' ';
    line += std::to_string(geom.inlier_count);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            line += ' ';
            line += format_double(geom.f(r, c));
        }
    line += '\n';
    return line;
}

}  // namespace

std::string pair_file_name(std::uint32_t image_i, std::uint32_t image_j) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "match_%06u_%06u.txt", image_i, image_j);
    return buf;
}

std::string oracle_file_name(std::uint32_t image_i, std::uint32_t image_j) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "oracle_%06u_%06u.txt", image_i, image_j);
    return buf;
}

std::filesystem::path code_cache_path(const std::filesystem::path& cache_dir,
                                      const std::string& image_id) {
    std::string sanitized;
    sanitized.reserve(image_id.size());
    for (char c : image_id)
        sanitized += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' ||
                      c == '_')
                         ? c
                         : '_';
    char suffix[24];
    std::snprintf(suffix, sizeof(suffix), "_%08x", static_cast<unsigned>(fnv1a(image_id)));
    return cache_dir / (sanitized + suffix + ".chcc");
}

HashSummary run_hash(const RunConfig& cfg) {
    const auto start = Clock::now();
    DatasetContext ctx = make_context(cfg);
    HashSummary summary;
    summary.images = ctx.manifest.size();
    centering_pass(ctx, summary.failures);
    hash_blocks(ctx, summary);
    summary.elapsed_s = seconds_since(start);
    return summary;
}

RunSummary run_match(const RunConfig& cfg, MatchMode mode) {
    DatasetContext ctx = make_context(cfg);
    std::filesystem::create_directories(cfg.out_dir);

    RunSummary summary;
    summary.image_count = ctx.manifest.size();
    const std::size_t k = ctx.manifest.size();
    const std::size_t all_pairs = k * (k - 1) / 2;

    summary.timings.hash_s = ensure_codes(ctx, summary.failures);

    const MatchConfig match_cfg = cfg.match_config();
    FileMatchSink sink(cfg.out_dir);
    std::atomic<std::size_t> pairs_matched{0};
    std::atomic<std::size_t> total_matches{0};

    const auto match_one = [&](std::uint32_t qi, std::uint32_t tj, const ArenaImage& a,
                               const ArenaImage& b, const FundamentalMatrix* f) {
        std::vector<MatchRecord> records =
            f ? guided_match_pair(a.features, b.features, a.codes, b.codes, *f, match_cfg,
                                  cfg.epipolar_band_px)
              : match_pair(a.features, b.features, a.codes, b.codes, match_cfg);
        total_matches += records.size();
        ++pairs_matched;
        sink.accept(PairMatches{qi, tj, a.features.image_id, b.features.image_id,
                                pair_file_name(qi, tj), std::move(records)});
    };

    if (mode == MatchMode::Exhaustive) {
        summary.pairs_planned = all_pairs;
        const PairPlan plan = plan_exhaustive(ctx.partition);
        const auto match_start = Clock::now();
        execute_plan(
            ctx, plan, kLoadFeatures | kLoadCodes,
            [&](const PlanTask& task, const ArenaBlock& a, const ArenaBlock& b) {
                for (const auto& [qi, tj] : task.pairs) {
                    const ArenaImage& ia = a.image(qi);
                    const ArenaImage& ib = b.image(tj);
                    if (!ia.valid || !ib.valid) continue;
                    match_one(qi, tj, ia, ib, nullptr);
                }
            },
            summary.failures, &summary.timings.io_s);
        summary.timings.match_s = seconds_since(match_start);
    } else {
        // Stage 1: seed matching and geometry across every pair.
        summary.seed_pairs = all_pairs;
        TimeCounter seed_time, estimate_time;
        std::mutex geometry_mutex;
        std::map<std::pair<std::uint32_t, std::uint32_t>, TwoViewGeometry> geometries;

        const PairPlan seed_plan = plan_exhaustive(ctx.partition);
        execute_plan(
            ctx, seed_plan, kLoadFeatures | kLoadSeedSubset,
            [&](const PlanTask& task, const ArenaBlock& a, const ArenaBlock& b) {
                for (const auto& [qi, tj] : task.pairs) {
                    const ArenaImage& ia = a.image(qi);
                    const ArenaImage& ib = b.image(tj);
                    if (!ia.valid || !ib.valid) continue;

                    auto t0 = Clock::now();
                    const std::vector<MatchRecord> seeds =
                        match_pair(ia.seed_selection.features, ib.seed_selection.features,
                                   ia.seed_codes, ib.seed_codes, match_cfg);
                    seed_time.add(seconds_since(t0));

                    std::vector<Correspondence> correspondences;
                    correspondences.reserve(seeds.size());
                    for (const MatchRecord& m : seeds) {
                        const Keypoint& pa =
                            ia.features.keypoints[ia.seed_selection.original_indices[m.query_index]];
                        const Keypoint& pb =
                            ib.features.keypoints[ib.seed_selection.original_indices[m.train_index]];
                        correspondences.push_back({pa.x, pa.y, pb.x, pb.y});
                    }
                    t0 = Clock::now();
                    TwoViewGeometry geom = ransac_fundamental(
                        correspondences, cfg.ransac_config(pair_seed(cfg.seed, qi, tj)));
                    estimate_time.add(seconds_since(t0));
                    geom.inlier_mask.clear();
                    std::lock_guard lock(geometry_mutex);
                    geometries.emplace(std::make_pair(qi, tj), std::move(geom));
                }
            },
            summary.failures, &summary.timings.io_s);
        summary.timings.seed_s = seed_time.seconds();
        summary.timings.estimate_s = estimate_time.seconds();

        // Geometry report, ordered by pair.
        {
            std::ofstream report(cfg.out_dir / kGeometryReportName,
                                 std::ios::binary | std::ios::trunc);
            for (const auto& [pair, geom] : geometries)
                report << geometry_report_line(ctx, pair.first, pair.second, geom);
        }

        std::vector<std::pair<std::uint32_t, std::uint32_t>> accepted;
        std::unordered_map<std::uint64_t, FundamentalMatrix> models;
        for (const auto& [pair, geom] : geometries) {
            if (!geom.accepted) continue;
            accepted.push_back(pair);
            models.emplace(static_cast<std::uint64_t>(pair.first) * k + pair.second, geom.f);
        }
        summary.accepted_pairs = accepted.size();
        summary.pairs_planned = accepted.size();

        // Stage 2: guided matching over the gated pairs.
        const PairPlan guided_plan = plan_guided(ctx.partition, accepted);
        const auto match_start = Clock::now();
        execute_plan(
            ctx, guided_plan, kLoadFeatures | kLoadCodes,
            [&](const PlanTask& task, const ArenaBlock& a, const ArenaBlock& b) {
                for (const auto& [qi, tj] : task.pairs) {
                    const ArenaImage& ia = a.image(qi);
                    const ArenaImage& ib = b.image(tj);
                    if (!ia.valid || !ib.valid) continue;
                    const FundamentalMatrix& f =
                        models.at(static_cast<std::uint64_t>(qi) * k + tj);
                    match_one(qi, tj, ia, ib, &f);
                }
            },
            summary.failures, &summary.timings.io_s);
        summary.timings.match_s = seconds_since(match_start);
    }

    sink.finish();
    for (auto& f : sink.take_failures()) summary.failures.push_back(std::move(f));
    summary.timings.io_s += sink.io_seconds();
    summary.pairs_matched = pairs_matched.load();
    summary.total_matches = total_matches.load();
    if (summary.timings.match_s > 0)
        summary.pairs_per_s = static_cast<double>(summary.pairs_matched) / summary.timings.match_s;
    std::sort(summary.failures.begin(), summary.failures.end());
    return summary;
}

OracleSummary run_oracle(const RunConfig& cfg) {
    const auto start = Clock::now();
    DatasetContext ctx = make_context(cfg);
    std::filesystem::create_directories(cfg.out_dir);

    OracleSummary summary;
    std::vector<std::string> failures;
    ensure_codes(ctx, failures);

    const MatchConfig match_cfg = cfg.match_config();
    FileMatchSink sink(cfg.out_dir);
    std::atomic<std::size_t> pairs{0}, oracle_total{0}, cascade_total{0}, agreed_total{0};
    std::mutex report_mutex;
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::array<std::size_t, 3>> per_pair;

    const PairPlan plan = plan_exhaustive(ctx.partition);
    execute_plan(
        ctx, plan, kLoadFeatures | kLoadCodes,
        [&](const PlanTask& task, const ArenaBlock& a, const ArenaBlock& b) {
            for (const auto& [qi, tj] : task.pairs) {
                const ArenaImage& ia = a.image(qi);
                const ArenaImage& ib = b.image(tj);
                if (!ia.valid || !ib.valid) continue;
                std::vector<MatchRecord> oracle =
                    brute_force_match(ia.features, ib.features, cfg.ratio);
                const std::vector<MatchRecord> cascade =
                    match_pair(ia.features, ib.features, ia.codes, ib.codes, match_cfg);

                std::size_t agreed = 0;
                {
                    // Oracle records are query-sorted, as are cascade's.
                    std::size_t oi = 0;
                    for (const MatchRecord& m : cascade) {
                        while (oi < oracle.size() && oracle[oi].query_index < m.query_index) ++oi;
                        if (oi < oracle.size() && oracle[oi].query_index == m.query_index &&
                            oracle[oi].train_index == m.train_index)
                            ++agreed;
                    }
                }
                ++pairs;
                oracle_total += oracle.size();
                cascade_total += cascade.size();
                agreed_total += agreed;
                {
                    std::lock_guard lock(report_mutex);
                    per_pair[{qi, tj}] = {oracle.size(), cascade.size(), agreed};
                }
                sink.accept(PairMatches{qi, tj, ia.features.image_id, ib.features.image_id,
                                        oracle_file_name(qi, tj), std::move(oracle)});
            }
        },
        failures, nullptr);
    sink.finish();
    for (auto& f : sink.take_failures()) failures.push_back(std::move(f));

    {
        std::ofstream report(cfg.out_dir / kOracleReportName, std::ios::binary | std::ios::trunc);
        report << "# image_i image_j oracle cascade agreed recall precision\n";
        for (const auto& [pair, counts] : per_pair) {
            const auto [o, c, g] = std::tuple{counts[0], counts[1], counts[2]};
            const double recall = o ? static_cast<double>(g) / static_cast<double>(o) : 1.0;
            const double precision = c ? static_cast<double>(g) / static_cast<double>(c) : 1.0;
            report << ctx.manifest.entries[pair.first].image_id << ' '
                   << ctx.manifest.entries[pair.second].image_id << ' ' << o << ' ' << c << ' '
                   << g << ' ' << format_double(recall) << ' ' << format_double(precision)
                   << '\n';
        }
    }

    summary.pairs = pairs.load();
    summary.oracle_matches = oracle_total.load();
    summary.cascade_matches = cascade_total.load();
    summary.agreeing_matches = agreed_total.load();
    summary.recall = summary.oracle_matches
                         ? static_cast<double>(summary.agreeing_matches) /
                               static_cast<double>(summary.oracle_matches)
                         : 1.0;
    summary.precision = summary.cascade_matches
                            ? static_cast<double>(summary.agreeing_matches) /
                                  static_cast<double>(summary.cascade_matches)
                            : 1.0;
    summary.failures = std::move(failures);
    std::sort(summary.failures.begin(), summary.failures.end());
    summary.elapsed_s = seconds_since(start);
    return summary;
}

std::vector<BenchReduceRow> bench_reduce(std::uint64_t seed, std::size_t vector_pairs,
                                         std::size_t repetitions) {
    // Integer-valued inputs: every tail setting returns bit-identical sums,
    // so the checksum column doubles as the equivalence assertion.
    std::mt19937_64 rng(mix64(seed, 0xbe4cULL));
    std::vector<std::array<double, kDescriptorDim>> lhs(vector_pairs), rhs(vector_pairs);
    for (std::size_t i = 0; i < vector_pairs; ++i)
        for (std::size_t c = 0; c < kDescriptorDim; ++c) {
            lhs[i][c] = static_cast<double>(static_cast<int>(uniform_below(rng, 256)) - 128);
            rhs[i][c] = static_cast<double>(static_cast<int>(uniform_below(rng, 256)) - 128);
        }

    std::vector<BenchReduceRow> rows;
    for (int rounds = 0; rounds <= kMaxReduceRounds; ++rounds) {
        double checksum = 0;
        const auto start = Clock::now();
        for (std::size_t rep = 0; rep < repetitions; ++rep)
            for (std::size_t i = 0; i < vector_pairs; ++i)
                checksum += reduce_dot<double>(lhs[i], rhs[i], rounds);
        const double elapsed = seconds_since(start);
        rows.push_back({rounds,
                        elapsed * 1e9 / static_cast<double>(vector_pairs * repetitions),
                        checksum});
    }
    return rows;
}

}  // namespace cashash
