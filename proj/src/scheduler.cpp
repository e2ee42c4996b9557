#include "cashash/scheduler.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace cashash {

Partition make_partition(std::uint32_t image_count, std::uint32_t block_images,
                         std::uint32_t blocks_per_group) {
    if (image_count == 0) throw std::invalid_argument("partition: empty manifest");
    if (block_images == 0 || blocks_per_group == 0)
        throw std::invalid_argument("partition: block_images and blocks_per_group must be >= 1");

    Partition p;
    p.image_count = image_count;
    p.block_images = block_images;
    p.blocks_per_group = blocks_per_group;
    for (std::uint32_t first = 0; first < image_count; first += block_images)
        p.block_ranges.emplace_back(first, std::min(first + block_images, image_count));
    const auto block_count = static_cast<std::uint32_t>(p.block_ranges.size());
    p.block_group_of.resize(block_count);
    for (std::uint32_t b = 0; b < block_count; b += blocks_per_group) {
        std::vector<std::uint32_t> blocks;
        for (std::uint32_t i = b; i < std::min(b + blocks_per_group, block_count); ++i) {
            blocks.push_back(i);
            p.block_group_of[i] = static_cast<std::uint32_t>(p.group_blocks.size());
        }
        p.group_blocks.push_back(std::move(blocks));
    }
    return p;
}

Partition make_partition(const DatasetManifest& manifest, std::uint32_t block_images,
                         std::uint32_t blocks_per_group) {
    return make_partition(static_cast<std::uint32_t>(manifest.size()), block_images,
                          blocks_per_group);
}

std::size_t PairPlan::pair_count() const {
    std::size_t n = 0;
    for (const PlanTask& t : tasks) n += t.pairs.size();
    return n;
}

namespace {

PlanTask make_cross_task(const Partition& p, std::uint32_t block_a, std::uint32_t block_b) {
    if (block_a > block_b) std::swap(block_a, block_b);
    PlanTask task;
    task.group_a = p.block_group_of[block_a];
    task.group_b = p.block_group_of[block_b];
    task.block_a = block_a;
    task.block_b = block_b;
    const auto [a_first, a_last] = p.block_ranges[block_a];
    const auto [b_first, b_last] = p.block_ranges[block_b];
    task.pairs.reserve(static_cast<std::size_t>(a_last - a_first) * (b_last - b_first));
    for (std::uint32_t a = a_first; a < a_last; ++a)
        for (std::uint32_t b = b_first; b < b_last; ++b) task.pairs.emplace_back(a, b);
    return task;
}

PlanTask make_self_task(const Partition& p, std::uint32_t block) {
    PlanTask task;
    task.group_a = task.group_b = p.block_group_of[block];
    task.block_a = task.block_b = block;
    const auto [first, last] = p.block_ranges[block];
    for (std::uint32_t a = first; a < last; ++a)
        for (std::uint32_t b = a + 1; b < last; ++b) task.pairs.emplace_back(a, b);
    return task;
}

// Edge ordering of the complete graph over `count` vertices in which
// consecutive edges share a vertex and the first edge touches `entry`:
// anchored serpentine with the vertex labels rotated so `entry` comes first.
std::vector<std::pair<std::uint32_t, std::uint32_t>> chained_edges(std::uint32_t count,
                                                                   std::uint32_t entry) {
    std::vector<std::uint32_t> label;
    label.reserve(count);
    label.push_back(entry);
    for (std::uint32_t v = 0; v < count; ++v)
        if (v != entry) label.push_back(v);

    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
    edges.reserve(static_cast<std::size_t>(count) * (count - 1) / 2);
    for (std::uint32_t a = 0; a + 1 < count; ++a) {
        if (a % 2 == 0) {
            for (std::uint32_t b = a + 1; b < count; ++b) edges.emplace_back(label[a], label[b]);
        } else {
            for (std::uint32_t b = count; b-- > a + 1;) edges.emplace_back(label[a], label[b]);
        }
    }
    return edges;
}

}  // namespace

PairPlan plan_exhaustive(const Partition& p) {
    PairPlan plan;
    const std::uint32_t group_count = p.group_count();

    for (std::uint32_t gi = 0; gi < group_count; ++gi) {
        const auto& anchor_blocks = p.group_blocks[gi];
        const auto anchor_count = static_cast<std::uint32_t>(anchor_blocks.size());

        // Cross sweeps against every later group. The anchor block index and
        // the partner block index both serpentine, so consecutive tasks keep
        // one block of the previous task resident.
        std::uint32_t j = 0;
        bool j_forward = true;
        for (std::uint32_t gk = gi + 1; gk < group_count; ++gk) {
            const auto& partner_blocks = p.group_blocks[gk];
            const auto partner_count = static_cast<std::uint32_t>(partner_blocks.size());
            std::uint32_t l = 0;
            bool l_forward = true;
            for (std::uint32_t js = 0; js < anchor_count; ++js) {
                for (std::uint32_t ls = 0; ls < partner_count; ++ls) {
                    plan.tasks.push_back(
                        make_cross_task(p, anchor_blocks[j], partner_blocks[l]));
                    if (ls + 1 < partner_count) l = l_forward ? l + 1 : l - 1;
                }
                l_forward = !l_forward;
                if (js + 1 < anchor_count) j = j_forward ? j + 1 : j - 1;
            }
            j_forward = !j_forward;
        }

        // Block pairs within the anchor group, chained from wherever the
        // cross sweep left off.
        for (const auto& [a, b] : chained_edges(anchor_count, j))
            plan.tasks.push_back(make_cross_task(p, anchor_blocks[a], anchor_blocks[b]));

        // Pairs within each block; blocks holding a single image contribute
        // nothing and are skipped.
        for (std::uint32_t blk : anchor_blocks) {
            PlanTask task = make_self_task(p, blk);
            if (!task.pairs.empty()) plan.tasks.push_back(std::move(task));
        }
    }
    return plan;
}

PairPlan plan_guided(const Partition& p,
                     const std::vector<std::pair<std::uint32_t, std::uint32_t>>& accepted_pairs) {
    std::unordered_set<std::uint64_t> accepted;
    accepted.reserve(accepted_pairs.size());
    for (auto [a, b] : accepted_pairs) {
        if (a == b) throw std::invalid_argument("plan_guided: self pair");
        if (a > b) std::swap(a, b);
        if (b >= p.image_count) throw std::invalid_argument("plan_guided: unknown image index");
        accepted.insert(static_cast<std::uint64_t>(a) * p.image_count + b);
    }

    PairPlan plan;
    for (PlanTask& task : plan_exhaustive(p).tasks) {
        std::erase_if(task.pairs, [&](const auto& pr) {
            return !accepted.contains(static_cast<std::uint64_t>(pr.first) * p.image_count +
                                      pr.second);
        });
        if (!task.pairs.empty()) plan.tasks.push_back(std::move(task));
    }
    return plan;
}

std::vector<std::vector<std::uint32_t>> assign_workers(const PairPlan& plan,
                                                       std::uint32_t worker_count) {
    if (worker_count == 0) throw std::invalid_argument("assign_workers: need >= 1 worker");
    std::vector<std::vector<std::uint32_t>> lists(worker_count);
    for (std::uint32_t t = 0; t < plan.tasks.size(); ++t)
        lists[t % worker_count].push_back(t);
    return lists;
}

std::vector<ResidencyTask> residency_tasks(const PairPlan& plan) {
    std::vector<ResidencyTask> tasks;
    tasks.reserve(plan.tasks.size());
    for (const PlanTask& t : plan.tasks) {
        ResidencyTask rt;
        rt.groups.push_back(t.group_a);
        if (t.group_b != t.group_a) rt.groups.push_back(t.group_b);
        rt.blocks.push_back(t.block_a);
        rt.block_groups.push_back(t.group_a);
        if (t.block_b != t.block_a) {
            rt.blocks.push_back(t.block_b);
            rt.block_groups.push_back(t.group_b);
        }
        tasks.push_back(std::move(rt));
    }
    return tasks;
}

std::vector<ResidencyTask> hashing_residency_tasks(const Partition& p) {
    std::vector<ResidencyTask> tasks;
    tasks.reserve(p.block_count());
    for (std::uint32_t b = 0; b < p.block_count(); ++b)
        tasks.push_back(ResidencyTask{{p.block_group_of[b]}, {b}, {p.block_group_of[b]}});
    return tasks;
}

namespace {

constexpr std::uint32_t kNever = std::numeric_limits<std::uint32_t>::max();

std::uint32_t next_use(const std::vector<std::vector<std::uint32_t>>& uses, std::uint32_t id,
                       std::uint32_t from_task) {
    if (id >= uses.size()) return kNever;
    const auto& list = uses[id];
    const auto it = std::lower_bound(list.begin(), list.end(), from_task);
    return it == list.end() ? kNever : *it;
}

bool contains(const std::vector<std::uint32_t>& v, std::uint32_t id) {
    return std::find(v.begin(), v.end(), id) != v.end();
}

struct LevelView {
    std::vector<std::uint32_t>* resident;
    const std::vector<std::vector<std::uint32_t>>* uses;
    ResidencyLevel level;
};

// Makes one slot-freeing or loading step toward residency of `id`, whose
// first use is at task `need_at`. Returns nullopt when the level is full of
// data needed no later than `need_at` (the prefetch must wait).
std::optional<ResidencyAction> acquire(LevelView view, std::uint32_t id, std::uint32_t need_at,
                                       std::uint32_t slot_limit, std::uint32_t cursor,
                                       bool prefetch) {
    if (view.resident->size() < slot_limit) {
        view.resident->push_back(id);
        return ResidencyAction{ActionKind::Load, view.level, id, prefetch};
    }
    // Belady victim: the resident item used farthest in the future, and only
    // if it is needed strictly later than the item being brought in.
    std::uint32_t victim = kNever;
    std::uint32_t victim_use = 0;
    for (std::uint32_t res : *view.resident) {
        const std::uint32_t use = next_use(*view.uses, res, cursor);
        if (use > victim_use || (use == victim_use && (victim == kNever || res < victim))) {
            victim = res;
            victim_use = use;
        }
    }
    if (victim == kNever || victim_use <= need_at) return std::nullopt;
    std::erase(*view.resident, victim);
    return ResidencyAction{ActionKind::Evict, view.level, victim, false};
}

}  // namespace

ResidencyState make_residency_state(const std::vector<ResidencyTask>& tasks, ResidencyMode mode) {
    ResidencyState state;
    state.mode = mode;
    std::uint32_t max_group = 0, max_block = 0;
    for (const ResidencyTask& t : tasks) {
        for (std::uint32_t g : t.groups) max_group = std::max(max_group, g + 1);
        for (std::uint32_t b : t.blocks) max_block = std::max(max_block, b + 1);
    }
    state.group_uses.resize(max_group);
    state.block_uses.resize(max_block);
    for (std::uint32_t t = 0; t < tasks.size(); ++t) {
        for (std::uint32_t g : tasks[t].groups) state.group_uses[g].push_back(t);
        for (std::uint32_t b : tasks[t].blocks) state.block_uses[b].push_back(t);
    }
    state.done = tasks.empty();
    return state;
}

std::optional<ResidencyAction> step_residency(ResidencyState& state,
                                              const std::vector<ResidencyTask>& tasks) {
    if (state.done) return std::nullopt;
    const std::uint32_t limit = residency_slot_limit(state.mode);
    const ResidencyTask& current = tasks[state.cursor];
    const LevelView groups{&state.resident_groups, &state.group_uses, ResidencyLevel::Group};
    const LevelView blocks{&state.resident_blocks, &state.block_uses, ResidencyLevel::Block};

    // Line 1, memory level: groups the current task still misses.
    if (!state.begun) {
        for (std::uint32_t g : current.groups) {
            if (contains(state.resident_groups, g)) continue;
            const auto action = acquire(groups, g, state.cursor, limit, state.cursor, false);
            if (!action) throw std::logic_error("residency: current group load blocked");
            return action;
        }
    }

    // Line 2, memory level: nearest future group not yet resident.
    for (std::uint32_t t = state.cursor + 1; t < tasks.size(); ++t) {
        bool fetched_all = true;
        for (std::uint32_t g : tasks[t].groups) {
            if (contains(state.resident_groups, g)) continue;
            fetched_all = false;
            if (const auto action = acquire(groups, g, t, limit, state.cursor, true))
                return action;
        }
        if (!fetched_all) break;  // keep strict order: wait for this group
    }

    // Line 1, device level: blocks the current task still misses.
    if (!state.begun) {
        for (std::uint32_t b : current.blocks) {
            if (contains(state.resident_blocks, b)) continue;
            const auto action = acquire(blocks, b, state.cursor, limit, state.cursor, false);
            if (!action) throw std::logic_error("residency: current block load blocked");
            return action;
        }
    }

    // Line 2, device level: nearest future block whose group is in memory.
    for (std::uint32_t t = state.cursor + 1; t < tasks.size(); ++t) {
        bool fetched_all = true;
        bool blocked = false;
        for (std::size_t i = 0; i < tasks[t].blocks.size(); ++i) {
            const std::uint32_t b = tasks[t].blocks[i];
            if (contains(state.resident_blocks, b)) continue;
            fetched_all = false;
            if (!contains(state.resident_groups, tasks[t].block_groups[i])) {
                blocked = true;  // its group is not in memory yet; the block must wait
                break;
            }
            if (const auto action = acquire(blocks, b, t, limit, state.cursor, true))
                return action;
        }
        if (!fetched_all || blocked) break;  // keep strict prefetch order
    }

    if (!state.begun) {
        state.begun = true;
        return ResidencyAction{ActionKind::Begin, ResidencyLevel::Block, state.cursor, false};
    }

    const std::uint32_t finished = state.cursor;
    state.begun = false;
    ++state.cursor;
    if (state.cursor >= tasks.size()) state.done = true;
    return ResidencyAction{ActionKind::Finish, ResidencyLevel::Block, finished, false};
}

std::vector<ResidencyAction> simulate_residency(const std::vector<ResidencyTask>& tasks,
                                                ResidencyMode mode) {
    ResidencyState state = make_residency_state(tasks, mode);
    std::vector<ResidencyAction> trace;
    while (const auto action = step_residency(state, tasks)) trace.push_back(*action);
    return trace;
}

PartitionSizing auto_partition_sizing(std::uint64_t mean_image_bytes,
                                      std::uint64_t memory_budget_bytes) {
    PartitionSizing sizing;
    const std::uint64_t per_image = std::max<std::uint64_t>(1, mean_image_bytes);
    const std::uint64_t device_budget = memory_budget_bytes / 4;
    sizing.block_images =
        static_cast<std::uint32_t>(std::max<std::uint64_t>(1, device_budget / per_image / 3));
    const std::uint64_t group_bytes =
        std::max<std::uint64_t>(1, static_cast<std::uint64_t>(sizing.block_images) * per_image);
    sizing.blocks_per_group =
        static_cast<std::uint32_t>(std::max<std::uint64_t>(1, memory_budget_bytes / group_bytes / 3));
    return sizing;
}

}  // namespace cashash
