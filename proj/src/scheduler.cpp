#include "knotforge/scheduler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include "knotforge/error.hpp"

namespace knotforge::sched {

namespace {

// Counter namespace for the reference latent, disjoint from chunk noise.
constexpr std::uint64_t kReferenceCounter = 0x5245460000000000ull;

void check_finite(const std::vector<Tensor>& xs, std::size_t chunk) {
    for (const auto& x : xs) {
        if (!x.all_finite()) {
            throw NumericError(chunk, "non-finite prediction in chunk " + std::to_string(chunk));
        }
    }
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since)
        .count();
}

std::vector<FrameLatent> clean_frames(std::span<const Tensor> preds, std::int64_t start) {
    std::vector<FrameLatent> out;
    out.reserve(preds.size());
    for (std::size_t q = 0; q < preds.size(); ++q) {
        out.push_back(FrameLatent::generated(preds[q], start + static_cast<std::int64_t>(q), 0.0));
    }
    return out;
}

}  // namespace

void NoiseSchedule::validate() const {
    if (steps.empty()) {
        throw ConfigError("noise schedule: no steps");
    }
    if (steps.front() != 1000.0) {
        throw ConfigError("noise schedule: first step must be 1000");
    }
    for (std::size_t j = 1; j < steps.size(); ++j) {
        if (!(steps[j] < steps[j - 1])) {
            throw ConfigError("noise schedule: steps must be strictly decreasing");
        }
    }
    if (!(steps.back() > 0.0)) {
        throw ConfigError("noise schedule: steps must stay above the implicit final t = 0");
    }
}

void RolloutConfig::validate() const {
    if (c < 1) {
        throw ConfigError("rollout: chunk size must be >= 1");
    }
    if (k >= c) {
        throw ConfigError("rollout: knot length k=" + std::to_string(k) + " must be < c=" +
                          std::to_string(c));
    }
    if (L < c) {
        throw ConfigError("rollout: window L=" + std::to_string(L) + " shorter than c=" +
                          std::to_string(c));
    }
    if (frames == 0 || frames % c != 0) {
        throw ConfigError("rollout: frame count " + std::to_string(frames) +
                          " must be a positive multiple of c=" + std::to_string(c));
    }
    if (n0 < 0) {
        throw ConfigError("rollout: reference position must be non-negative");
    }
    if (running_ahead && s < c + k) {
        throw ConfigError("rollout: interleave s=" + std::to_string(s) + " must be >= c + k");
    }
    if (!running_ahead && n0 < static_cast<std::int64_t>(frames + k)) {
        throw ConfigError("rollout: without running ahead the reference position n0=" +
                          std::to_string(n0) + " must be >= " + std::to_string(frames + k) +
                          " to stay clear of generated frames");
    }
    schedule.validate();
}

Tensor forward_noise(const Tensor& x0, const Tensor& eps, double t) {
    if (t < 0.0 || t > 1000.0) {
        throw ScheduleError("forward_noise: t=" + std::to_string(t) + " outside [0, 1000]");
    }
    if (x0.shape() != eps.shape()) {
        throw DimensionError("forward_noise: shape mismatch");
    }
    const float b = static_cast<float>(t / 1000.0);
    const float a = 1.0f - b;
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < x0.size(); ++i) {
        out.data()[i] = a * x0.data()[i] + b * eps.data()[i];
    }
    return out;
}

Tensor fuse_knot(const Tensor& prefix_pred, const Tensor& suffix_pred) {
    if (prefix_pred.shape() != suffix_pred.shape()) {
        throw DimensionError("fuse_knot: shape mismatch");
    }
    Tensor out(prefix_pred.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] = (prefix_pred.data()[i] + suffix_pred.data()[i]) / 2.0f;
    }
    return out;
}

std::uint64_t noise_counter(std::size_t chunk, std::size_t step, std::size_t slot,
                            std::size_t schedule_len, std::size_t span) {
    return (static_cast<std::uint64_t>(chunk) * schedule_len + step) * span + slot;
}

Tensor sample_frame_noise(std::uint64_t seed, std::uint64_t counter, const model::ModelConfig& cfg) {
    Rng rng{seed, counter};
    return gaussian(rng, {cfg.tokens_per_frame, cfg.latent_channels});
}

Tensor reference_latent(std::uint64_t seed, const model::ModelConfig& cfg) {
    return sample_frame_noise(seed, kReferenceCounter, cfg);
}

std::vector<Tensor> denoise_chunk(const model::ToyDiT& model, std::span<const FrameLatent> x_T,
                                  const NoiseSchedule& schedule,
                                  std::span<const FrameLatent> knot,
                                  std::span<const KVEntry> kv_pre,
                                  std::span<const KVEntry> kv_ref,
                                  const model::DrivingSignal* drive, const NoiseFn& noise,
                                  model::ForwardStats* stats) {
    schedule.validate();
    std::vector<FrameLatent> x(x_T.begin(), x_T.end());
    std::vector<Tensor> pred;
    for (std::size_t j = 0; j < schedule.size(); ++j) {
        const double t = schedule.steps[j];
        pred = model.forward_denoise(x, t, knot, kv_pre, kv_ref, drive, stats);
        if (j + 1 == schedule.size()) {
            break;
        }
        const double t_next = schedule.steps[j + 1];
        for (std::size_t q = 0; q < x.size(); ++q) {
            x[q].tokens = forward_noise(pred[q], noise(j + 1, q), t_next);
            x[q].noise_level = t_next;
        }
    }
    return pred;
}

namespace {

struct RolloutState {
    const RolloutConfig& cfg;
    const model::ToyDiT& model;
    const model::DrivingSignal* drive;
    FrameLatent ref_frame;
    cache::ReferenceCache ref;
    cache::SlidingCache window;
    Rollout out;

    RolloutState(const RolloutConfig& c, const model::ToyDiT& m, const model::DrivingSignal* d,
                 const Tensor* reference)
        : cfg(c),
          model(m),
          drive(d),
          ref_frame(FrameLatent::condition(
              reference ? *reference : reference_latent(c.seed, m.config()), c.n0)),
          window(c.L, m.config().layers) {
        ref.current_pos = {c.n0};
        ref.entries = model.forward_kv(std::span(&ref_frame, 1), {}, {});
        out.trace.denoise_count.assign(c.frames + c.k, 0);
    }

    std::vector<KVEntry> encode_reference(rope::PositionIndex pos, model::ForwardStats* stats) {
        if (cfg.fast_recache) {
            cache::ReferenceCache moved = ref;
            cache::rotate_reference(moved, pos, model.config().rope());
            return moved.entries;
        }
        FrameLatent f = ref_frame;
        f.pos = pos;
        return model.forward_kv(std::span(&f, 1), {}, {}, nullptr, stats);
    }

    std::vector<FrameLatent> initial_noise(std::size_t chunk, std::int64_t start,
                                           std::size_t span) const {
        std::vector<FrameLatent> x;
        for (std::size_t q = 0; q < span; ++q) {
            const auto ctr = noise_counter(chunk, 0, q, cfg.schedule.size(), span);
            x.push_back(FrameLatent::generated(sample_frame_noise(cfg.seed, ctr, model.config()),
                                               start + static_cast<std::int64_t>(q),
                                               cfg.schedule.steps.front()));
        }
        return x;
    }

    NoiseFn noise_for(std::size_t chunk, std::size_t span) const {
        return [this, chunk, span](std::size_t step, std::size_t slot) {
            return sample_frame_noise(
                cfg.seed, noise_counter(chunk, step, slot, cfg.schedule.size(), span),
                model.config());
        };
    }

    // Appends the clean chunk frames to the window with their full context.
    void update_window(std::span<const Tensor> clean, std::int64_t start,
                       model::ForwardStats* stats) {
        const auto frames = clean_frames(clean, start);
        const auto entries =
            model.forward_kv(frames, window.entries(), ref.entries, drive, stats);
        window.push(entries);
    }
};

void check_drive(const RolloutConfig& cfg, const model::DrivingSignal* drive) {
    if (drive != nullptr && drive->frames() < cfg.frames + cfg.k) {
        throw ConfigError("driving signal has " + std::to_string(drive->frames()) +
                          " frames, rollout needs " + std::to_string(cfg.frames + cfg.k));
    }
}

}  // namespace

Rollout generate_stream(const RolloutConfig& cfg, const model::ToyDiT& model,
                        const model::DrivingSignal* drive, const Tensor* reference) {
    cfg.validate();
    check_drive(cfg, drive);
    RolloutState st(cfg, model, drive, reference);
    const std::size_t span = cfg.span();
    std::vector<FrameLatent> knot;  // clean suffix predictions of the previous chunk

    for (std::size_t i = 0, chunk = 0; i < cfg.frames; i += cfg.c, ++chunk) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto start = static_cast<std::int64_t>(i);
        ChunkRecord rec;
        rec.chunk = chunk;
        rec.start = start;

        if (cfg.running_ahead) {
            model::ForwardStats recache_stats;
            rec.recache = cache::running_ahead(
                st.ref, start, cfg.c, cfg.k, cfg.s,
                [&](rope::PositionIndex p) { return st.encode_reference(p, &recache_stats); });
            if (rec.recache) {
                st.ref_frame.pos = st.ref.current_pos;
            }
            rec.recache_score_elements = recache_stats.score_elements;
        }
        rec.ref_pos = st.ref.current_pos.frame_pos;
        rec.window = st.window.positions();
        rec.last_denoised_pos = start + static_cast<std::int64_t>(span) - 1;

        model::ForwardStats stats;
        const auto x_T = st.initial_noise(chunk, start, span);
        std::vector<Tensor> pred = denoise_chunk(model, x_T, cfg.schedule, knot,
                                                 st.window.entries(), st.ref.entries, drive,
                                                 st.noise_for(chunk, span), &stats);
        check_finite(pred, chunk);
        for (std::size_t q = 0; q < span; ++q) {
            ++st.out.trace.denoise_count[i + q];
        }

        double knot_sq = 0.0;
        for (std::size_t q = 0; q < knot.size(); ++q) {
            KnotRecord kr{start + static_cast<std::int64_t>(q), pred[q], knot[q].tokens, {}};
            kr.fused = fuse_knot(kr.prefix, kr.suffix);
            const double d = l2_distance(kr.prefix, kr.suffix);
            knot_sq += d * d;
            pred[q] = kr.fused;
            rec.knots.push_back(std::move(kr));
        }
        rec.knot_fused_l2 = std::sqrt(knot_sq);

        knot.clear();
        for (std::size_t q = cfg.c; q < span; ++q) {
            knot.push_back(FrameLatent::generated(pred[q], start + static_cast<std::int64_t>(q), 0.0));
        }
        for (std::size_t q = 0; q < cfg.c; ++q) {
            st.out.frames.push_back(pred[q]);
        }
        st.update_window(std::span(pred).first(cfg.c), start, &stats);

        rec.score_elements = stats.score_elements;
        rec.cache_frames = st.window.frames() + 1;
        st.out.trace.cache.push_back(cache::snapshot(chunk, st.window, st.ref, rec.recache));
        rec.t_wall_ms = elapsed_ms(t0);
        st.out.trace.chunks.push_back(std::move(rec));
    }
    return std::move(st.out);
}

Rollout generate_baseline(const RolloutConfig& cfg_in, const model::ToyDiT& model,
                          const model::DrivingSignal* drive, const Tensor* reference) {
    RolloutConfig cfg = cfg_in;
    cfg.k = 0;
    cfg.running_ahead = false;
    cfg.validate();
    check_drive(cfg, drive);
    RolloutState st(cfg, model, drive, reference);

    for (std::size_t i = 0, chunk = 0; i < cfg.frames; i += cfg.c, ++chunk) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto start = static_cast<std::int64_t>(i);
        ChunkRecord rec;
        rec.chunk = chunk;
        rec.start = start;
        rec.ref_pos = st.ref.current_pos.frame_pos;
        rec.window = st.window.positions();
        rec.last_denoised_pos = start + static_cast<std::int64_t>(cfg.c) - 1;

        model::ForwardStats stats;
        const auto x_T = st.initial_noise(chunk, start, cfg.c);
        std::vector<Tensor> pred =
            denoise_chunk(model, x_T, cfg.schedule, {}, st.window.entries(), st.ref.entries, drive,
                          st.noise_for(chunk, cfg.c), &stats);
        check_finite(pred, chunk);
        for (std::size_t q = 0; q < cfg.c; ++q) {
            ++st.out.trace.denoise_count[i + q];
            st.out.frames.push_back(pred[q]);
        }
        st.update_window(pred, start, &stats);

        rec.score_elements = stats.score_elements;
        rec.cache_frames = st.window.frames() + 1;
        st.out.trace.cache.push_back(cache::snapshot(chunk, st.window, st.ref, false));
        rec.t_wall_ms = elapsed_ms(t0);
        st.out.trace.chunks.push_back(std::move(rec));
    }
    return std::move(st.out);
}

std::uint64_t expected_score_elements(const RolloutConfig& cfg, const model::ModelConfig& mcfg,
                                      std::size_t start) {
    const std::uint64_t tpf = mcfg.tokens_per_frame;
    const std::uint64_t window = std::min(start, cfg.L);
    const std::uint64_t span = cfg.span();
    const std::uint64_t per_head_layer =
        cfg.schedule.size() * (span * tpf) * ((1 + window + span) * tpf) +
        (cfg.c * tpf) * ((1 + window + cfg.c) * tpf);
    return static_cast<std::uint64_t>(mcfg.layers) * mcfg.heads * per_head_layer;
}

model::OracleOutput incremental_forward(const model::ToyDiT& model,
                                        std::span<const FrameLatent> frames, double t,
                                        const topology::MaskDesign& design,
                                        const FrameLatent* reference,
                                        const model::DrivingSignal* drive) {
    design.validate();
    using topology::Variant;
    const std::size_t n = frames.size();
    const std::size_t layers = model.config().layers;
    std::optional<std::size_t> capacity = design.L;
    std::size_t sink = 0;
    if (design.variant == Variant::GrowingCache) {
        capacity.reset();
    } else if (design.variant == Variant::SinkWindow) {
        sink = design.sink;
    }
    cache::SlidingCache window(capacity, layers, sink);
    std::vector<KVEntry> ref_entries;
    if (design.variant == Variant::KnotForcing) {
        if (reference == nullptr) {
            throw DimensionError("incremental_forward: KnotForcing needs a reference frame");
        }
        ref_entries = model.forward_kv(std::span(reference, 1), {}, {});
    }

    model::OracleOutput out;
    out.predictions.resize(n);
    out.knot.resize(n);
    const std::size_t span = design.span();
    for (std::size_t s = 0; s < n; s += design.c) {
        const std::size_t end = std::min(s + span, n);
        std::vector<FrameLatent> chunk;
        std::vector<FrameLatent> knot;
        for (std::size_t g = s; g < end; ++g) {
            FrameLatent f = frames[g];
            f.noise_level = t;
            const std::size_t slot = g - s;
            if (slot >= design.c) {
                f = f.stripped();
            } else if (slot == knot.size() && slot < design.k && f.conditioned()) {
                knot.push_back(FrameLatent::generated(f.cond, f.pos.frame_pos, 0.0));
                f = f.stripped();
            }
            chunk.push_back(std::move(f));
        }
        const auto context = window.entries();
        const auto pred = model.forward_denoise(chunk, t, knot, context, ref_entries, drive);
        for (std::size_t g = s; g < end; ++g) {
            if (g - s < design.c) {
                out.predictions[g] = pred[g - s];
            } else {
                out.knot[g] = pred[g - s];
            }
        }
        const auto merged = model::merge_knot(chunk, knot);
        auto entries = model.forward_kv(merged, context, ref_entries, drive);
        std::erase_if(entries, [&](const KVEntry& e) {
            return e.pos.frame_pos >= static_cast<std::int64_t>(s + design.c);
        });
        window.push(entries);
    }
    return out;
}

}  // namespace knotforge::sched
