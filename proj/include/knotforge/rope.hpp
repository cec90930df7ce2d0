#pragma once

#include <cstdint>

#include "knotforge/tensor.hpp"

namespace knotforge::rope {

/// Temporal rotary encoding parameters. One index per frame, shared by all its tokens.
struct RopeConfig {
    std::size_t head_dim = 16;
    double base = 10000.0;

    void validate() const;
};

/// Temporal frame index. The reference frame may sit ahead of the rollout.
struct PositionIndex {
    std::int64_t frame_pos = 0;

    friend auto operator<=>(const PositionIndex&, const PositionIndex&) = default;
};

/// Rotates consecutive pairs (2j, 2j+1) of every row by pos * base^(-2j/head_dim).
/// x is [tokens x head_dim].
Tensor apply(const Tensor& x, PositionIndex pos, const RopeConfig& cfg);

/// Same rotation applied independently to each head block of a
/// [tokens x heads*head_dim] tensor.
Tensor apply_heads(const Tensor& x, PositionIndex pos, const RopeConfig& cfg);

/// Rotation by a signed offset, used to move already-rotated keys.
Tensor shift_heads(const Tensor& x, std::int64_t delta, const RopeConfig& cfg);

}  // namespace knotforge::rope
