#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "knotforge/rope.hpp"
#include "knotforge/tensor.hpp"
#include "knotforge/topology.hpp"

namespace knotforge::model {

struct ModelConfig {
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t head_dim = 16;
    std::size_t tokens_per_frame = 4;
    std::size_t latent_channels = 8;
    std::size_t mask_channels = 1;
    std::size_t d_drive = 8;
    std::size_t drive_tokens = 2;  // key/value tokens each driving vector expands to
    double rope_base = 10000.0;
    bool zero_init_cross_out = false;
    bool tied_qk = true;
    std::uint64_t seed = 0;

    void validate() const;
    std::size_t width() const { return heads * head_dim; }
    /// noisy latent | condition latent | visibility mask
    std::size_t input_width() const { return 2 * latent_channels + mask_channels; }
    rope::RopeConfig rope() const { return {head_dim, rope_base}; }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// One latent frame as seen by the model. `cond` and `mask` form the
/// mask-inpainting channels: mask = 1 marks a clean conditioning frame
/// (reference or knot) whose latent is carried in `cond`.
struct FrameLatent {
    Tensor tokens;  // [tokens_per_frame x latent_channels]
    Tensor cond;    // same shape; zeros when unconditioned
    Tensor mask;    // [tokens_per_frame x 1], entries in {0, 1}
    rope::PositionIndex pos;
    double noise_level = 0.0;

    /// A frame to be generated: no condition, mask 0.
    static FrameLatent generated(Tensor tokens, std::int64_t pos, double noise_level);
    /// A clean conditioning frame (e.g. the reference): condition = latent, mask 1.
    static FrameLatent condition(Tensor latent, std::int64_t pos);
    /// Copy with condition cleared and mask 0.
    FrameLatent stripped() const;
    bool conditioned() const;
};

/// Per-frame control vectors indexed by frame position.
struct DrivingSignal {
    Tensor per_frame;  // [frames x d_drive]

    std::size_t frames() const { return per_frame.rows(); }
};

/// Per-layer key/value projections of one frame. Keys are RoPE-rotated at `pos`.
struct KVEntry {
    std::size_t layer = 0;
    rope::PositionIndex pos;
    Tensor keys;    // [tokens x heads*head_dim]
    Tensor values;  // [tokens x heads*head_dim]
};

struct ForwardStats {
    std::uint64_t score_elements = 0;  // self-attention logits evaluated
};

struct BlockWeights {
    Tensor wq, wk, wv, wo;      // [D x D]
    Tensor cross_q, cross_o;    // [D x D]
    Tensor cross_k, cross_v;    // [d_drive x drive_tokens*D]
    Tensor mlp_in;              // [D x 2D]
    Tensor mlp_out;             // [2D x D]
};

struct Weights {
    Tensor in_proj;      // [input_width x D]
    Tensor time_proj;    // [time_features x D]
    Tensor spatial_emb;  // [tokens_per_frame x D]
    Tensor out_proj;     // [D x latent_channels]
    std::vector<BlockWeights> blocks;

    /// Deterministic initialization from cfg.seed.
    static Weights init(const ModelConfig& cfg);

    /// Stable (name, tensor) enumeration used by the binary dump format.
    std::vector<std::pair<std::string, const Tensor*>> named() const;
    std::vector<std::pair<std::string, Tensor*>> named();
};

inline constexpr std::size_t kTimeFeatures = 8;

/// One slot of a dense pass. Undriven slots skip the cross-attention.
struct DenseSlot {
    FrameLatent latent;
    bool driven = true;
};

/// Result of the dense masked oracle.
struct OracleOutput {
    std::vector<Tensor> predictions;          // one per frame, from its own chunk
    std::vector<std::optional<Tensor>> knot;  // suffix prediction from the preceding chunk
};

/// Tiny diffusion transformer with fixed random weights.
class ToyDiT {
public:
    explicit ToyDiT(ModelConfig cfg);
    ToyDiT(ModelConfig cfg, Weights weights);

    const ModelConfig& config() const noexcept { return cfg_; }
    const Weights& weights() const noexcept { return weights_; }

    /// Clean prediction for every frame of a chunk at timestep t. The first
    /// knot.size() slots are conditioned on the knot latents (mask 1) and are
    /// still predicted. Context per query: kv_ref ∪ kv_pre ∪ the chunk itself.
    std::vector<Tensor> forward_denoise(std::span<const FrameLatent> chunk, double t,
                                        std::span<const FrameLatent> knot,
                                        std::span<const KVEntry> kv_pre,
                                        std::span<const KVEntry> kv_ref,
                                        const DrivingSignal* drive = nullptr,
                                        ForwardStats* stats = nullptr) const;

    /// Per-layer K/V of `frames` (layers x frames entries, frame-major) computed
    /// with context kv_ref ∪ kv_pre ∪ frames, each frame at its own noise level.
    std::vector<KVEntry> forward_kv(std::span<const FrameLatent> frames,
                                    std::span<const KVEntry> kv_pre,
                                    std::span<const KVEntry> kv_ref,
                                    const DrivingSignal* drive = nullptr,
                                    ForwardStats* stats = nullptr) const;

    /// Single dense masked pass over all frames. Each chunk's knot frames appear
    /// as extra slots (suffix copies) so the knot overlap is represented; the
    /// reference gets a slot that attends only to itself.
    OracleOutput dense_oracle(std::span<const FrameLatent> frames, double t,
                              const topology::AttentionMask& mask,
                              const FrameLatent* reference = nullptr,
                              const DrivingSignal* drive = nullptr) const;

    /// One dense pass over explicit slots, each at its own noise level.
    /// slot_mask(a, b) lets slot a attend to slot b. One prediction per slot.
    std::vector<Tensor> dense_forward(std::span<const DenseSlot> slots, const Mask& slot_mask,
                                      const DrivingSignal* drive = nullptr) const;

    /// First-layer projected q/k/v per frame (keys and queries rotated), for
    /// the contribution diagnostic. The reference, if given, is frame -1.
    topology::AttentionInputs attention_probe(std::span<const FrameLatent> frames,
                                              const FrameLatent* reference) const;

private:
    struct Pass;

    Tensor embed(const FrameLatent& frame, double t) const;
    Tensor time_embedding(double t) const;
    Tensor cross_attend(const Tensor& h, std::size_t layer, std::int64_t frame_pos,
                        const DrivingSignal& drive) const;
    Tensor mlp(const Tensor& h, std::size_t layer) const;
    void check_frame(const FrameLatent& f) const;

    ModelConfig cfg_;
    Weights weights_;
};

/// Attaches knot latents as clean conditions to the leading chunk slots.
std::vector<FrameLatent> merge_knot(std::span<const FrameLatent> chunk,
                                    std::span<const FrameLatent> knot);

}  // namespace knotforge::model
