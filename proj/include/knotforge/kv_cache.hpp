#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "knotforge/model.hpp"

namespace knotforge::cache {

using model::KVEntry;

/// Sliding window of per-frame KV groups, ordered by strictly increasing
/// frame position. Retains the `capacity` most recent frames plus any frame
/// whose position is below `sink` (attention sink). An empty capacity means
/// unbounded (growing cache).
class SlidingCache {
public:
    SlidingCache(std::optional<std::size_t> capacity, std::size_t layers, std::size_t sink = 0);

    /// Appends the frames carried by `entries` (one entry per layer per frame),
    /// then evicts oldest-first. Throws OrderingError if a new position does not
    /// exceed every cached position.
    void push(std::span<const KVEntry> entries);

    /// All entries ordered by position, then layer.
    std::vector<KVEntry> entries() const;
    std::vector<std::int64_t> positions() const;
    std::size_t frames() const noexcept { return groups_.size(); }
    std::optional<std::size_t> capacity() const noexcept { return capacity_; }
    std::size_t layers() const noexcept { return layers_; }

    friend bool operator==(const SlidingCache& a, const SlidingCache& b);

private:
    struct FrameGroup {
        std::int64_t pos;
        std::vector<KVEntry> layers;  // indexed by layer
    };

    void evict();

    std::optional<std::size_t> capacity_;
    std::size_t layers_;
    std::size_t sink_;
    std::deque<FrameGroup> groups_;
};

/// KV entries of the single reference frame and its current RoPE index.
struct ReferenceCache {
    std::vector<KVEntry> entries;
    rope::PositionIndex current_pos;
};

using Recache = std::function<std::vector<KVEntry>(rope::PositionIndex)>;

/// Running-ahead check before denoising the chunk starting at frame i that
/// covers positions i .. i+c+k-1. When i + c + k > n the reference index
/// moves to n + s and its entries are rebuilt through `recache`. With k = 1
/// this is the `i + c + 1 > n` trigger. Requires s >= c + k so one move
/// restores the reference-ahead invariant. Returns whether a recache happened.
bool running_ahead(ReferenceCache& ref, std::int64_t i, std::size_t c, std::size_t k,
                   std::size_t s, const Recache& recache);

/// Fast path: moves the reference to `new_pos` by re-rotating its cached keys.
/// Values are position independent for a reference encoded on its own.
void rotate_reference(ReferenceCache& ref, rope::PositionIndex new_pos,
                      const rope::RopeConfig& cfg);

/// Point-in-time view of the caches for trace export.
struct CacheSnapshot {
    std::size_t step = 0;
    std::vector<std::int64_t> window;
    std::int64_t ref_pos = 0;
    bool recache = false;

    std::size_t total_frames() const { return window.size() + 1; }
    nlohmann::json to_json() const;
};

CacheSnapshot snapshot(std::size_t step, const SlidingCache& window, const ReferenceCache& ref,
                       bool recache);

}  // namespace knotforge::cache
