#include "knotforge/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <string>

#include "knotforge/error.hpp"
#include "knotforge/kernels.hpp"

namespace knotforge::model {

namespace {

// Counter namespace for weight draws, disjoint from rollout noise counters.
constexpr std::uint64_t kWeightCounterBase = 0x5745000000000000ull;

Tensor draw(Rng& rng, std::vector<std::size_t> shape, float std_dev) {
    return scale(gaussian(rng, std::move(shape)), std_dev);
}

float inv_sqrt(std::size_t n) { return 1.0f / std::sqrt(static_cast<float>(n)); }

void rotate_rows(Tensor& x, std::size_t row_begin, std::size_t rows, rope::PositionIndex pos,
                 const rope::RopeConfig& cfg) {
    Tensor block = slice_rows(x, row_begin, row_begin + rows);
    block = rope::apply_heads(block, pos, cfg);
    std::copy(block.values().begin(), block.values().end(), x.row(row_begin).begin());
}

void add_into(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst.data()[i] += src.data()[i];
    }
}

void write_rows(Tensor& dst, std::size_t row_begin, const Tensor& src) {
    std::copy(src.values().begin(), src.values().end(), dst.row(row_begin).begin());
}

struct LayerContext {
    std::vector<Tensor> keys;    // per layer
    std::vector<Tensor> values;  // per layer
    std::set<std::int64_t> positions;
};

LayerContext gather(std::span<const KVEntry> entries, const ModelConfig& cfg, const char* what) {
    LayerContext ctx;
    ctx.keys.resize(cfg.layers);
    ctx.values.resize(cfg.layers);
    std::vector<std::vector<Tensor>> ks(cfg.layers);
    std::vector<std::vector<Tensor>> vs(cfg.layers);
    for (const auto& e : entries) {
        if (e.layer >= cfg.layers) {
            throw DimensionError(std::string(what) + ": entry layer out of range");
        }
        if (e.keys.cols() != cfg.width() || e.values.cols() != cfg.width() ||
            e.keys.rows() != e.values.rows()) {
            throw DimensionError(std::string(what) + ": entry width mismatch");
        }
        ks[e.layer].push_back(e.keys);
        vs[e.layer].push_back(e.values);
        ctx.positions.insert(e.pos.frame_pos);
    }
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        if (ks[l].size() != ks[0].size()) {
            throw DimensionError(std::string(what) + ": layers hold different frame counts");
        }
        ctx.keys[l] = ks[l].empty() ? Tensor::matrix(0, cfg.width()) : concat_rows(ks[l]);
        ctx.values[l] = vs[l].empty() ? Tensor::matrix(0, cfg.width()) : concat_rows(vs[l]);
    }
    return ctx;
}

}  // namespace

void ModelConfig::validate() const {
    if (layers == 0 || heads == 0 || head_dim == 0 || tokens_per_frame == 0 ||
        latent_channels == 0 || d_drive == 0 || drive_tokens == 0) {
        throw ConfigError("model config: all sizes must be positive");
    }
    if (mask_channels != 1) {
        throw ConfigError("model config: mask_channels must be 1");
    }
    rope().validate();
}

FrameLatent FrameLatent::generated(Tensor tokens, std::int64_t pos, double noise_level) {
    FrameLatent f;
    f.cond = Tensor(tokens.shape(), 0.0f);
    f.mask = Tensor::matrix(tokens.rows(), 1, 0.0f);
    f.tokens = std::move(tokens);
    f.pos = {pos};
    f.noise_level = noise_level;
    return f;
}

FrameLatent FrameLatent::condition(Tensor latent, std::int64_t pos) {
    FrameLatent f;
    f.mask = Tensor::matrix(latent.rows(), 1, 1.0f);
    f.cond = latent;
    f.tokens = std::move(latent);
    f.pos = {pos};
    f.noise_level = 0.0;
    return f;
}

FrameLatent FrameLatent::stripped() const {
    FrameLatent f = *this;
    f.cond = Tensor(tokens.shape(), 0.0f);
    f.mask = Tensor::matrix(tokens.rows(), 1, 0.0f);
    return f;
}

bool FrameLatent::conditioned() const {
    return !mask.empty() &&
           std::all_of(mask.values().begin(), mask.values().end(), [](float v) { return v == 1.0f; });
}

std::vector<FrameLatent> merge_knot(std::span<const FrameLatent> chunk,
                                    std::span<const FrameLatent> knot) {
    if (knot.size() > chunk.size()) {
        throw DimensionError("merge_knot: more knot frames than chunk slots");
    }
    std::vector<FrameLatent> out(chunk.begin(), chunk.end());
    for (std::size_t s = 0; s < knot.size(); ++s) {
        if (knot[s].pos != chunk[s].pos) {
            throw PositionError("merge_knot: knot position " + std::to_string(knot[s].pos.frame_pos) +
                                " does not match slot position " +
                                std::to_string(chunk[s].pos.frame_pos));
        }
        if (knot[s].tokens.shape() != chunk[s].tokens.shape()) {
            throw DimensionError("merge_knot: knot latent shape mismatch");
        }
        out[s].cond = knot[s].tokens;
        out[s].mask = Tensor::matrix(chunk[s].tokens.rows(), 1, 1.0f);
    }
    return out;
}

Weights Weights::init(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng{cfg.seed, kWeightCounterBase};
    const std::size_t d = cfg.width();
    Weights w;
    w.in_proj = draw(rng, {cfg.input_width(), d}, inv_sqrt(cfg.input_width()));
    w.time_proj = draw(rng, {kTimeFeatures, d}, inv_sqrt(kTimeFeatures));
    w.spatial_emb = draw(rng, {cfg.tokens_per_frame, d}, 0.5f);
    w.out_proj = draw(rng, {d, cfg.latent_channels}, inv_sqrt(d));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        BlockWeights b;
        b.wq = draw(rng, {d, d}, inv_sqrt(d));
        b.wk = draw(rng, {d, d}, inv_sqrt(d));
        if (cfg.tied_qk) b.wk = b.wq;
        b.wv = draw(rng, {d, d}, inv_sqrt(d));
        b.wo = draw(rng, {d, d}, inv_sqrt(d));
        b.cross_q = draw(rng, {d, d}, inv_sqrt(d));
        b.cross_k = draw(rng, {cfg.d_drive, cfg.drive_tokens * d}, inv_sqrt(cfg.d_drive));
        b.cross_v = draw(rng, {cfg.d_drive, cfg.drive_tokens * d}, inv_sqrt(cfg.d_drive));
        b.cross_o = draw(rng, {d, d}, inv_sqrt(d));
        if (cfg.zero_init_cross_out) {
            b.cross_o = Tensor::matrix(d, d, 0.0f);
        }
        b.mlp_in = draw(rng, {d, 2 * d}, inv_sqrt(d));
        b.mlp_out = draw(rng, {2 * d, d}, inv_sqrt(2 * d));
        w.blocks.push_back(std::move(b));
    }
    return w;
}

namespace {

template <typename W, typename T>
std::vector<std::pair<std::string, T*>> named_impl(W& w) {
    std::vector<std::pair<std::string, T*>> out{
        {"in_proj", &w.in_proj},
        {"time_proj", &w.time_proj},
        {"spatial_emb", &w.spatial_emb},
        {"out_proj", &w.out_proj},
    };
    for (std::size_t l = 0; l < w.blocks.size(); ++l) {
        auto& b = w.blocks[l];
        const std::string p = "blocks." + std::to_string(l) + ".";
        out.emplace_back(p + "wq", &b.wq);
        out.emplace_back(p + "wk", &b.wk);
        out.emplace_back(p + "wv", &b.wv);
        out.emplace_back(p + "wo", &b.wo);
        out.emplace_back(p + "cross_q", &b.cross_q);
        out.emplace_back(p + "cross_k", &b.cross_k);
        out.emplace_back(p + "cross_v", &b.cross_v);
        out.emplace_back(p + "cross_o", &b.cross_o);
        out.emplace_back(p + "mlp_in", &b.mlp_in);
        out.emplace_back(p + "mlp_out", &b.mlp_out);
    }
    return out;
}

}  // namespace

std::vector<std::pair<std::string, const Tensor*>> Weights::named() const {
    return named_impl<const Weights, const Tensor>(*this);
}

std::vector<std::pair<std::string, Tensor*>> Weights::named() {
    return named_impl<Weights, Tensor>(*this);
}

ToyDiT::ToyDiT(ModelConfig cfg) : cfg_(cfg), weights_(Weights::init(cfg)) {}

ToyDiT::ToyDiT(ModelConfig cfg, Weights weights) : cfg_(cfg), weights_(std::move(weights)) {
    cfg_.validate();
    const Weights reference = Weights::init(cfg_);
    const auto want = reference.named();
    const auto got = weights_.named();
    if (want.size() != got.size()) {
        throw DimensionError("weights: tensor count does not match config");
    }
    for (std::size_t i = 0; i < want.size(); ++i) {
        if (want[i].second->shape() != got[i].second->shape()) {
            throw DimensionError("weights: shape mismatch for " + want[i].first);
        }
    }
}

void ToyDiT::check_frame(const FrameLatent& f) const {
    if (f.tokens.rows() != cfg_.tokens_per_frame || f.tokens.cols() != cfg_.latent_channels) {
        throw DimensionError("frame latent: expected [" + std::to_string(cfg_.tokens_per_frame) +
                             " x " + std::to_string(cfg_.latent_channels) + "] tokens");
    }
    if (f.cond.shape() != f.tokens.shape() || f.mask.rows() != cfg_.tokens_per_frame ||
        f.mask.cols() != 1) {
        throw DimensionError("frame latent: condition or mask shape mismatch");
    }
    if (f.noise_level < 0.0 || f.noise_level > 1000.0) {
        throw ScheduleError("frame latent: noise level outside [0, 1000]");
    }
    if (f.pos.frame_pos < 0) {
        throw PositionError("frame latent: negative position");
    }
}

Tensor ToyDiT::time_embedding(double t) const {
    Tensor feats = Tensor::matrix(1, kTimeFeatures);
    for (std::size_t m = 0; m < kTimeFeatures / 2; ++m) {
        const double angle = std::numbers::pi * std::ldexp(1.0, static_cast<int>(m)) * (t / 1000.0);
        feats.at(0, 2 * m) = static_cast<float>(std::sin(angle));
        feats.at(0, 2 * m + 1) = static_cast<float>(std::cos(angle));
    }
    return matmul(feats, weights_.time_proj);
}

Tensor ToyDiT::embed(const FrameLatent& frame, double t) const {
    const Tensor parts[] = {frame.tokens, frame.cond, frame.mask};
    Tensor h = matmul(concat_cols(parts), weights_.in_proj);
    add_into(h, weights_.spatial_emb);
    return add_row_broadcast(h, time_embedding(t).row(0));
}

Tensor ToyDiT::cross_attend(const Tensor& h, std::size_t layer, std::int64_t frame_pos,
                            const DrivingSignal& drive) const {
    if (drive.per_frame.cols() != cfg_.d_drive) {
        throw DimensionError("driving signal: expected d_drive=" + std::to_string(cfg_.d_drive));
    }
    if (frame_pos < 0 || static_cast<std::size_t>(frame_pos) >= drive.frames()) {
        throw DimensionError("driving signal: no vector for frame " + std::to_string(frame_pos));
    }
    const auto& b = weights_.blocks[layer];
    const std::size_t d = cfg_.width();
    const Tensor vec = slice_rows(drive.per_frame, static_cast<std::size_t>(frame_pos),
                                  static_cast<std::size_t>(frame_pos) + 1);
    // [1 x drive_tokens*D] viewed as [drive_tokens x D]
    auto tokens = [&](const Tensor& proj) {
        const Tensor flat = matmul(vec, proj);
        return Tensor({cfg_.drive_tokens, d},
                      std::vector<float>(flat.values().begin(), flat.values().end()));
    };
    const Tensor k = tokens(b.cross_k);
    const Tensor v = tokens(b.cross_v);
    const Tensor q = matmul(layer_norm_rows(h), b.cross_q);
    return matmul(kernels::attention(q, k, v, cfg_.heads), b.cross_o);
}

Tensor ToyDiT::mlp(const Tensor& h, std::size_t layer) const {
    const auto& b = weights_.blocks[layer];
    return matmul(gelu(matmul(layer_norm_rows(h), b.mlp_in)), b.mlp_out);
}

// Shared body of forward_denoise / forward_kv: one pass over a set of frames
// whose attention context is the cached entries plus the frames themselves.
struct ToyDiT::Pass {
    static std::pair<std::vector<Tensor>, std::vector<KVEntry>> run(
        const ToyDiT& m, std::span<const FrameLatent> frames, std::optional<double> t,
        std::span<const KVEntry> kv_pre, std::span<const KVEntry> kv_ref,
        const DrivingSignal* drive, bool capture, ForwardStats* stats) {
        const ModelConfig& cfg = m.cfg_;
        const std::size_t tpf = cfg.tokens_per_frame;
        const auto rope_cfg = cfg.rope();
        if (frames.empty()) {
            throw DimensionError("forward: empty frame list");
        }

        std::set<std::int64_t> own;
        for (const auto& f : frames) {
            m.check_frame(f);
            if (!own.insert(f.pos.frame_pos).second) {
                throw PositionError("forward: duplicate frame position " +
                                    std::to_string(f.pos.frame_pos));
            }
        }
        const LayerContext ref = gather(kv_ref, cfg, "kv_ref");
        const LayerContext pre = gather(kv_pre, cfg, "kv_pre");
        for (std::int64_t p : ref.positions) {
            if (own.contains(p)) {
                throw PositionError("forward: reference RoPE position " + std::to_string(p) +
                                    " collides with a chunk frame");
            }
        }
        for (std::int64_t p : pre.positions) {
            if (own.contains(p)) {
                throw PositionError("forward: cached frame position " + std::to_string(p) +
                                    " collides with a chunk frame");
            }
        }

        std::vector<Tensor> embedded;
        embedded.reserve(frames.size());
        for (const auto& f : frames) {
            embedded.push_back(m.embed(f, t.value_or(f.noise_level)));
        }
        Tensor h = concat_rows(embedded);

        std::vector<KVEntry> captured;
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            const auto& b = m.weights_.blocks[l];
            const Tensor a = layer_norm_rows(h);
            Tensor q = matmul(a, b.wq);
            Tensor k = matmul(a, b.wk);
            const Tensor v = matmul(a, b.wv);
            for (std::size_t f = 0; f < frames.size(); ++f) {
                rotate_rows(q, f * tpf, tpf, frames[f].pos, rope_cfg);
                rotate_rows(k, f * tpf, tpf, frames[f].pos, rope_cfg);
            }
            if (capture) {
                for (std::size_t f = 0; f < frames.size(); ++f) {
                    captured.push_back({l, frames[f].pos, slice_rows(k, f * tpf, (f + 1) * tpf),
                                        slice_rows(v, f * tpf, (f + 1) * tpf)});
                }
            }
            const Tensor keys[] = {ref.keys[l], pre.keys[l], k};
            const Tensor vals[] = {ref.values[l], pre.values[l], v};
            const Tensor all_k = concat_rows(keys);
            const Tensor all_v = concat_rows(vals);
            if (stats != nullptr) {
                stats->score_elements += cfg.heads * q.rows() * all_k.rows();
            }
            add_into(h, matmul(kernels::attention(q, all_k, all_v, cfg.heads), b.wo));

            if (drive != nullptr) {
                for (std::size_t f = 0; f < frames.size(); ++f) {
                    Tensor hf = slice_rows(h, f * tpf, (f + 1) * tpf);
                    add_into(hf, m.cross_attend(hf, l, frames[f].pos.frame_pos, *drive));
                    write_rows(h, f * tpf, hf);
                }
            }
            add_into(h, m.mlp(h, l));
        }

        std::vector<Tensor> preds;
        if (!capture) {
            const Tensor out = matmul(layer_norm_rows(h), m.weights_.out_proj);
            for (std::size_t f = 0; f < frames.size(); ++f) {
                preds.push_back(slice_rows(out, f * tpf, (f + 1) * tpf));
            }
        }
        // Entries are produced layer-major; reorder frame-major.
        std::vector<KVEntry> ordered;
        ordered.reserve(captured.size());
        for (std::size_t f = 0; capture && f < frames.size(); ++f) {
            for (std::size_t l = 0; l < cfg.layers; ++l) {
                ordered.push_back(std::move(captured[l * frames.size() + f]));
            }
        }
        return {std::move(preds), std::move(ordered)};
    }
};

std::vector<Tensor> ToyDiT::forward_denoise(std::span<const FrameLatent> chunk, double t,
                                            std::span<const FrameLatent> knot,
                                            std::span<const KVEntry> kv_pre,
                                            std::span<const KVEntry> kv_ref,
                                            const DrivingSignal* drive,
                                            ForwardStats* stats) const {
    if (t < 0.0 || t > 1000.0) {
        throw ScheduleError("forward_denoise: timestep outside [0, 1000]");
    }
    const std::vector<FrameLatent> merged = merge_knot(chunk, knot);
    return Pass::run(*this, merged, t, kv_pre, kv_ref, drive, false, stats).first;
}

std::vector<KVEntry> ToyDiT::forward_kv(std::span<const FrameLatent> frames,
                                        std::span<const KVEntry> kv_pre,
                                        std::span<const KVEntry> kv_ref,
                                        const DrivingSignal* drive, ForwardStats* stats) const {
    return Pass::run(*this, frames, std::nullopt, kv_pre, kv_ref, drive, true, stats).second;
}

std::vector<Tensor> ToyDiT::dense_forward(std::span<const DenseSlot> slots, const Mask& slot_mask,
                                          const DrivingSignal* drive) const {
    const std::size_t num_slots = slots.size();
    if (slot_mask.rows() != num_slots || slot_mask.cols() != num_slots) {
        throw DimensionError("dense_forward: slot mask does not match " +
                             std::to_string(num_slots) + " slots");
    }
    for (const auto& s : slots) {
        check_frame(s.latent);
    }
    const std::size_t tpf = cfg_.tokens_per_frame;
    Mask token_mask(num_slots * tpf, num_slots * tpf, false);
    for (std::size_t a = 0; a < num_slots; ++a) {
        for (std::size_t b = 0; b < num_slots; ++b) {
            if (!slot_mask(a, b)) {
                continue;
            }
            for (std::size_t i = 0; i < tpf; ++i) {
                for (std::size_t j = 0; j < tpf; ++j) {
                    token_mask.set(a * tpf + i, b * tpf + j, true);
                }
            }
        }
    }

    std::vector<Tensor> embedded;
    for (const auto& s : slots) {
        embedded.push_back(embed(s.latent, s.latent.noise_level));
    }
    Tensor h = concat_rows(embedded);
    const auto rope_cfg = cfg_.rope();
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const auto& b = weights_.blocks[l];
        const Tensor a = layer_norm_rows(h);
        Tensor q = matmul(a, b.wq);
        Tensor k = matmul(a, b.wk);
        const Tensor v = matmul(a, b.wv);
        for (std::size_t s = 0; s < num_slots; ++s) {
            rotate_rows(q, s * tpf, tpf, slots[s].latent.pos, rope_cfg);
            rotate_rows(k, s * tpf, tpf, slots[s].latent.pos, rope_cfg);
        }
        add_into(h, matmul(kernels::attention(q, k, v, cfg_.heads, &token_mask), b.wo));
        if (drive != nullptr) {
            for (std::size_t s = 0; s < num_slots; ++s) {
                if (!slots[s].driven) {
                    continue;
                }
                Tensor hs = slice_rows(h, s * tpf, (s + 1) * tpf);
                add_into(hs, cross_attend(hs, l, slots[s].latent.pos.frame_pos, *drive));
                write_rows(h, s * tpf, hs);
            }
        }
        add_into(h, mlp(h, l));
    }
    const Tensor out = matmul(layer_norm_rows(h), weights_.out_proj);
    std::vector<Tensor> preds;
    for (std::size_t s = 0; s < num_slots; ++s) {
        preds.push_back(slice_rows(out, s * tpf, (s + 1) * tpf));
    }
    return preds;
}

OracleOutput ToyDiT::dense_oracle(std::span<const FrameLatent> frames, double t,
                                  const topology::AttentionMask& mask,
                                  const FrameLatent* reference,
                                  const DrivingSignal* drive) const {
    if (t < 0.0 || t > 1000.0) {
        throw ScheduleError("dense_oracle: timestep outside [0, 1000]");
    }
    const std::size_t n = frames.size();
    if (mask.num_frames() != n) {
        throw DimensionError("dense_oracle: mask covers " + std::to_string(mask.num_frames()) +
                             " frames, got " + std::to_string(n));
    }
    for (const auto& f : frames) {
        check_frame(f);
    }
    const bool use_ref = mask.uses_reference();
    if (use_ref && reference == nullptr) {
        throw DimensionError("dense_oracle: mask attends to the reference but none was given");
    }

    std::vector<DenseSlot> slots;
    std::vector<std::size_t> chunk_start;
    std::vector<std::size_t> canonical(n);
    std::vector<std::optional<std::size_t>> suffix_slot(n);
    const std::size_t c = mask.chunk;
    const std::size_t span = mask.span;
    for (std::size_t s = 0; s < n; s += c) {
        for (std::size_t g = s; g < std::min(s + span, n); ++g) {
            FrameLatent f = g < s + c ? frames[g] : frames[g].stripped();
            f.noise_level = t;
            (g < s + c ? canonical[g] : suffix_slot[g].emplace()) = slots.size();
            slots.push_back({std::move(f), true});
            chunk_start.push_back(s);
        }
    }
    std::size_t ref_slot = 0;
    if (use_ref) {
        check_frame(*reference);
        ref_slot = slots.size();
        slots.push_back({*reference, false});
    }

    // Slot-level visibility derived from the frame-level mask.
    const std::size_t num_slots = slots.size();
    Mask slot_mask(num_slots, num_slots, false);
    for (std::size_t a = 0; a < num_slots; ++a) {
        if (use_ref && a == ref_slot) {
            slot_mask.set(a, a, true);
            continue;
        }
        const std::size_t s = chunk_start[a];
        for (std::int64_t h : mask.context(static_cast<std::int64_t>(s))) {
            std::size_t target;
            if (h == topology::kReferenceFrame) {
                target = ref_slot;
            } else if (static_cast<std::size_t>(h) >= s + c &&
                       static_cast<std::size_t>(h) < s + span) {
                target = *suffix_slot[static_cast<std::size_t>(h)];
            } else {
                target = canonical[static_cast<std::size_t>(h)];
            }
            slot_mask.set(a, target, true);
        }
    }

    const auto out = dense_forward(slots, slot_mask, drive);
    OracleOutput result;
    result.knot.resize(n);
    for (std::size_t g = 0; g < n; ++g) {
        result.predictions.push_back(out[canonical[g]]);
        if (suffix_slot[g]) {
            result.knot[g] = out[*suffix_slot[g]];
        }
    }
    return result;
}

topology::AttentionInputs ToyDiT::attention_probe(std::span<const FrameLatent> frames,
                                                  const FrameLatent* reference) const {
    topology::AttentionInputs inputs;
    inputs.heads = cfg_.heads;
    const auto& b = weights_.blocks.front();
    const auto rope_cfg = cfg_.rope();
    auto project = [&](const FrameLatent& f, std::int64_t id) {
        check_frame(f);
        const Tensor a = layer_norm_rows(embed(f, f.noise_level));
        inputs.frames.push_back({id, rope::apply_heads(matmul(a, b.wq), f.pos, rope_cfg),
                                 rope::apply_heads(matmul(a, b.wk), f.pos, rope_cfg),
                                 matmul(a, b.wv)});
    };
    if (reference != nullptr) {
        project(*reference, topology::kReferenceFrame);
    }
    for (const auto& f : frames) {
        project(f, f.pos.frame_pos);
    }
    return inputs;
}

}  // namespace knotforge::model
