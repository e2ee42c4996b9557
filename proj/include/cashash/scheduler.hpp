#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "cashash/feature_io.hpp"

namespace cashash {

// Contiguous split of the image list into blocks of block_images images and
// groups of blocks_per_group blocks; the tails may be short.
struct Partition {
    std::uint32_t image_count = 0;
    std::uint32_t block_images = 0;
    std::uint32_t blocks_per_group = 0;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> block_ranges;  // [first, last) per block
    std::vector<std::vector<std::uint32_t>> group_blocks;               // block ids per group
    std::vector<std::uint32_t> block_group_of;                          // group id per block

    std::uint32_t block_count() const { return static_cast<std::uint32_t>(block_ranges.size()); }
    std::uint32_t group_count() const { return static_cast<std::uint32_t>(group_blocks.size()); }
    std::uint32_t block_size(std::uint32_t block) const {
        return block_ranges[block].second - block_ranges[block].first;
    }
};

Partition make_partition(std::uint32_t image_count, std::uint32_t block_images,
                         std::uint32_t blocks_per_group);
Partition make_partition(const DatasetManifest& manifest, std::uint32_t block_images,
                         std::uint32_t blocks_per_group);

// One schedulable unit: an unordered block pair plus the image pairs it
// covers. Self tasks have block_a == block_b.
struct PlanTask {
    std::uint32_t group_a = 0, group_b = 0;  // group_a <= group_b
    std::uint32_t block_a = 0, block_b = 0;  // global block ids, block_a <= block_b
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;  // image pairs, first < second
};

struct PairPlan {
    std::vector<PlanTask> tasks;

    std::size_t pair_count() const;
};

// Every unordered image pair exactly once, ordered so consecutive tasks
// share resident data wherever the partition permits: per anchor group, all
// later groups in ascending order with serpentine block traversal, then
// intra-group block pairs chained from the block the cross sweep ended on,
// then within-block self pairs.
PairPlan plan_exhaustive(const Partition& partition);

// The exhaustive traversal restricted to the given image pairs (tasks that
// end up empty are dropped). Throws if a pair references an unknown image.
PairPlan plan_guided(const Partition& partition,
                     const std::vector<std::pair<std::uint32_t, std::uint32_t>>& accepted_pairs);

// Round-robin sharding of tasks over workers in plan order; worker w runs
// tasks w, w + worker_count, ... Outputs are per-pair and order-free, so the
// merged result is identical for every worker count.
std::vector<std::vector<std::uint32_t>> assign_workers(const PairPlan& plan,
                                                       std::uint32_t worker_count);

// Residency limits from the two-line loading diagrams: hashing keeps two
// groups/blocks resident with one in progress; matching keeps three with at
// most two in progress.
enum class ResidencyMode { Hashing, Matching };

inline constexpr std::uint32_t residency_slot_limit(ResidencyMode mode) {
    return mode == ResidencyMode::Hashing ? 2u : 3u;
}

// Data a task needs resident before it can begin. groups holds the blocks'
// parent groups (deduplicated); block_groups pairs each block with its own
// group so block loads can wait for the right memory-level load.
struct ResidencyTask {
    std::vector<std::uint32_t> groups;
    std::vector<std::uint32_t> blocks;
    std::vector<std::uint32_t> block_groups;  // parallel to blocks
};

std::vector<ResidencyTask> residency_tasks(const PairPlan& plan);
std::vector<ResidencyTask> hashing_residency_tasks(const Partition& partition);

enum class ActionKind { Load, Evict, Begin, Finish };
enum class ResidencyLevel { Group, Block };

struct ResidencyAction {
    ActionKind kind = ActionKind::Load;
    ResidencyLevel level = ResidencyLevel::Group;  // for Load/Evict
    std::uint32_t id = 0;                          // group/block id, or task index
    bool prefetch = false;                         // Load issued ahead of need (line 2)
};

// Two-line state machine: line 1 loads and runs the current task, line 2
// prefetches the nearest future group/block into free slots, never evicting
// data a nearer task still needs.
struct ResidencyState {
    ResidencyMode mode = ResidencyMode::Matching;
    std::uint32_t cursor = 0;  // current task index
    bool begun = false;
    bool done = false;
    std::vector<std::uint32_t> resident_groups;
    std::vector<std::uint32_t> resident_blocks;

    // Use index over the plan (first task per item, per position), built by
    // make_residency_state; keyed by group/block id.
    std::vector<std::vector<std::uint32_t>> group_uses;
    std::vector<std::vector<std::uint32_t>> block_uses;
};

ResidencyState make_residency_state(const std::vector<ResidencyTask>& tasks, ResidencyMode mode);

// Advances the machine one transition and reports the action taken:
// loads/evictions for the current task (line 1), prefetches for upcoming
// tasks (line 2), then begin/finish of the current task. Returns nullopt
// once the plan is exhausted.
std::optional<ResidencyAction> step_residency(ResidencyState& state,
                                              const std::vector<ResidencyTask>& tasks);

// Runs the machine to completion and returns the full action trace.
std::vector<ResidencyAction> simulate_residency(const std::vector<ResidencyTask>& tasks,
                                                ResidencyMode mode);

// Block/group sizing from a memory budget: the device arena is modeled as a
// quarter of main memory, and each level must hold three of its units.
struct PartitionSizing {
    std::uint32_t block_images = 1;
    std::uint32_t blocks_per_group = 1;
};

PartitionSizing auto_partition_sizing(std::uint64_t mean_image_bytes,
                                      std::uint64_t memory_budget_bytes);

}  // namespace cashash
