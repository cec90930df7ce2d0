#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "knotforge/tensor.hpp"

namespace knotforge::topology {

/// Column index used for the reference frame in every mask.
inline constexpr std::int64_t kReferenceFrame = -1;

enum class Variant {
    GrowingCache,  // unbounded causal prefix (CausVid / Self Forcing)
    SinkWindow,    // attention sink + sliding window (LongLive)
    KnotForcing,   // reference + sliding window + chunk extended by k knot frames
};

std::string_view to_string(Variant v);
/// Accepts the enum spelling or the short forms growing/sink/knot.
Variant parse_variant(std::string_view name);

struct MaskDesign {
    Variant variant = Variant::KnotForcing;
    std::size_t c = 3;     // chunk size
    std::size_t L = 6;     // window length in frames
    std::size_t k = 1;     // knot length, KnotForcing only
    std::size_t sink = 3;  // sink frames, SinkWindow only

    void validate() const;
    /// Frames jointly denoised per chunk: c + k for KnotForcing, c otherwise.
    std::size_t span() const { return variant == Variant::KnotForcing ? c + k : c; }
};

/// Frame-granular attention mask. Rows are frames 0..N-1; columns are the
/// reference (-1) followed by frames 0..N-1.
struct AttentionMask {
    std::vector<std::int64_t> rows;
    std::vector<std::int64_t> cols;
    Mask allow;
    // Chunk partition the rows were built from. Frames [s, s + span) are
    // denoised together for every chunk start s = 0, c, 2c, ...
    std::size_t chunk = 1;
    std::size_t span = 1;

    std::size_t num_frames() const { return rows.size(); }
    std::size_t col_index(std::int64_t frame) const {
        return static_cast<std::size_t>(frame + 1);
    }
    bool visible(std::int64_t row_frame, std::int64_t col_frame) const;
    bool uses_reference() const;
    /// Sorted context set of a row frame (reference first when visible).
    std::vector<std::int64_t> context(std::int64_t row_frame) const;
};

AttentionMask build_mask(const MaskDesign& design, std::size_t num_frames);

/// Every frame sees every frame (and the reference if requested); one chunk.
AttentionMask full_mask(std::size_t num_frames, bool with_reference);

/// |C_t ∩ C_{t+1}| / |C_t ∪ C_{t+1}| over frame-index context sets.
double context_iou(const AttentionMask& mask, std::size_t t);

/// Per-frame projected attention inputs. Keys are already rotated to the
/// frame's position. q may be empty for frames that are never anchors.
struct FrameAttentionInputs {
    std::int64_t frame = 0;
    Tensor q;  // [tokens x heads*head_dim]
    Tensor k;
    Tensor v;
};

struct AttentionInputs {
    std::size_t heads = 1;
    std::vector<FrameAttentionInputs> frames;
};

struct ContributionScore {
    std::int64_t frame = 0;
    double score = 0.0;
};

/// Ablates each frame's keys/values from the anchor's context and scores the
/// relative L2 change of the anchor's attention output. One score per entry
/// of `inputs.frames`, in the same order; frames outside the anchor's context
/// score exactly 0.
std::vector<ContributionScore> frame_contribution(const AttentionInputs& inputs,
                                                  std::int64_t anchor,
                                                  const AttentionMask& mask);

}  // namespace knotforge::topology
