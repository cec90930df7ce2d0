#include "knotforge/kv_cache.hpp"

#include <map>
#include <string>

#include "knotforge/error.hpp"

namespace knotforge::cache {

SlidingCache::SlidingCache(std::optional<std::size_t> capacity, std::size_t layers,
                           std::size_t sink)
    : capacity_(capacity), layers_(layers), sink_(sink) {
    if (layers_ == 0) {
        throw ConfigError("sliding cache: layers must be positive");
    }
    if (capacity_ && *capacity_ == 0) {
        throw ConfigError("sliding cache: capacity must be positive");
    }
}

void SlidingCache::push(std::span<const KVEntry> entries) {
    std::map<std::int64_t, std::vector<std::optional<KVEntry>>> incoming;
    for (const auto& e : entries) {
        if (e.layer >= layers_) {
            throw DimensionError("sliding cache: entry layer " + std::to_string(e.layer) +
                                 " out of range");
        }
        auto& slot = incoming[e.pos.frame_pos];
        slot.resize(layers_);
        if (slot[e.layer]) {
            throw DimensionError("sliding cache: duplicate entry for position " +
                                 std::to_string(e.pos.frame_pos));
        }
        slot[e.layer] = e;
    }
    if (incoming.empty()) {
        return;
    }
    if (!groups_.empty() && incoming.begin()->first <= groups_.back().pos) {
        throw OrderingError("sliding cache: position " + std::to_string(incoming.begin()->first) +
                            " does not follow cached position " +
                            std::to_string(groups_.back().pos));
    }
    for (auto& [pos, layer_entries] : incoming) {
        FrameGroup g{pos, {}};
        for (auto& e : layer_entries) {
            if (!e) {
                throw DimensionError("sliding cache: frame " + std::to_string(pos) +
                                     " is missing a layer");
            }
            g.layers.push_back(std::move(*e));
        }
        groups_.push_back(std::move(g));
    }
    evict();
}

void SlidingCache::evict() {
    if (!capacity_) {
        return;
    }
    std::deque<FrameGroup> kept;
    const std::size_t n = groups_.size();
    for (std::size_t i = 0; i < n; ++i) {
        const bool recent = i + *capacity_ >= n;
        const bool sink = groups_[i].pos < static_cast<std::int64_t>(sink_);
        if (recent || sink) {
            kept.push_back(std::move(groups_[i]));
        }
    }
    groups_ = std::move(kept);
}

std::vector<KVEntry> SlidingCache::entries() const {
    std::vector<KVEntry> out;
    out.reserve(groups_.size() * layers_);
    for (const auto& g : groups_) {
        out.insert(out.end(), g.layers.begin(), g.layers.end());
    }
    return out;
}

std::vector<std::int64_t> SlidingCache::positions() const {
    std::vector<std::int64_t> out;
    for (const auto& g : groups_) {
        out.push_back(g.pos);
    }
    return out;
}

bool operator==(const SlidingCache& a, const SlidingCache& b) {
    if (a.capacity_ != b.capacity_ || a.layers_ != b.layers_ || a.sink_ != b.sink_ ||
        a.groups_.size() != b.groups_.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.groups_.size(); ++i) {
        const auto& ga = a.groups_[i];
        const auto& gb = b.groups_[i];
        if (ga.pos != gb.pos) {
            return false;
        }
        for (std::size_t l = 0; l < a.layers_; ++l) {
            if (!ga.layers[l].keys.bit_equal(gb.layers[l].keys) ||
                !ga.layers[l].values.bit_equal(gb.layers[l].values)) {
                return false;
            }
        }
    }
    return true;
}

bool running_ahead(ReferenceCache& ref, std::int64_t i, std::size_t c, std::size_t k,
                   std::size_t s, const Recache& recache) {
    if (s < c + k) {
        throw ConfigError("running ahead: interleave s=" + std::to_string(s) +
                          " must be >= c + k = " + std::to_string(c + k));
    }
    const std::int64_t horizon = i + static_cast<std::int64_t>(c + k);
    if (horizon <= ref.current_pos.frame_pos) {
        return false;
    }
    const rope::PositionIndex next{ref.current_pos.frame_pos + static_cast<std::int64_t>(s)};
    ref.entries = recache(next);
    ref.current_pos = next;
    return true;
}

void rotate_reference(ReferenceCache& ref, rope::PositionIndex new_pos,
                      const rope::RopeConfig& cfg) {
    const std::int64_t delta = new_pos.frame_pos - ref.current_pos.frame_pos;
    for (auto& e : ref.entries) {
        e.keys = rope::shift_heads(e.keys, delta, cfg);
        e.pos = new_pos;
    }
    ref.current_pos = new_pos;
}

nlohmann::json CacheSnapshot::to_json() const {
    return {{"step", step}, {"window", window}, {"ref_pos", ref_pos}, {"recache", recache},
            {"cache_frames", total_frames()}};
}

CacheSnapshot snapshot(std::size_t step, const SlidingCache& window, const ReferenceCache& ref,
                       bool recache) {
    return {step, window.positions(), ref.current_pos.frame_pos, recache};
}

}  // namespace knotforge::cache
