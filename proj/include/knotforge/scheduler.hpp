#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "knotforge/kv_cache.hpp"
#include "knotforge/model.hpp"
#include "knotforge/topology.hpp"

namespace knotforge::sched {

using model::FrameLatent;
using model::KVEntry;

/// Descending timesteps; the implicit final state is t = 0.
struct NoiseSchedule {
    std::vector<double> steps{1000.0, 750.0, 500.0, 250.0};

    void validate() const;
    std::size_t size() const { return steps.size(); }

    friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;
};

struct RolloutConfig {
    std::size_t frames = 12;  // M, a multiple of c
    std::size_t c = 3;        // chunk size
    std::size_t L = 6;        // window length in frames
    std::size_t k = 1;        // knot length
    std::size_t s = 6;        // running-ahead interleave
    std::int64_t n0 = 5;      // initial reference position
    std::uint64_t seed = 0;
    bool running_ahead = true;
    bool fast_recache = false;  // rotate cached reference keys instead of a full forward
    NoiseSchedule schedule;

    void validate() const;
    std::size_t span() const { return c + k; }

    friend bool operator==(const RolloutConfig&, const RolloutConfig&) = default;
};

/// Rectified-flow interpolation (1 - t/1000) * x0 + (t/1000) * eps.
Tensor forward_noise(const Tensor& x0, const Tensor& eps, double t);

/// Elementwise mean of the two predictions of a knot frame.
Tensor fuse_knot(const Tensor& prefix_pred, const Tensor& suffix_pred);

/// Counter of the noise draw for (chunk, step, slot). step 0 is the initial
/// x_T; step j > 0 is the re-noising after denoise step j. Distinct triples
/// map to distinct counters for a fixed schedule length and chunk span.
std::uint64_t noise_counter(std::size_t chunk, std::size_t step, std::size_t slot,
                            std::size_t schedule_len, std::size_t span);

/// One frame of standard normal noise for the given counter.
Tensor sample_frame_noise(std::uint64_t seed, std::uint64_t counter, const model::ModelConfig& cfg);

/// Synthetic reference latent derived from the rollout seed.
Tensor reference_latent(std::uint64_t seed, const model::ModelConfig& cfg);

using NoiseFn = std::function<Tensor(std::size_t step, std::size_t slot)>;

/// Few-step denoising of one chunk. Predicts x0 at each t_j and re-noises to
/// t_{j-1} with fresh noise; returns the final-step prediction for every slot.
std::vector<Tensor> denoise_chunk(const model::ToyDiT& model, std::span<const FrameLatent> x_T,
                                  const NoiseSchedule& schedule,
                                  std::span<const FrameLatent> knot,
                                  std::span<const KVEntry> kv_pre,
                                  std::span<const KVEntry> kv_ref,
                                  const model::DrivingSignal* drive, const NoiseFn& noise,
                                  model::ForwardStats* stats = nullptr);

struct KnotRecord {
    std::int64_t pos = 0;
    Tensor prefix;  // prediction as the head of the current chunk
    Tensor suffix;  // prediction as the tail of the previous chunk
    Tensor fused;   // value written to the output
};

struct ChunkRecord {
    std::size_t chunk = 0;
    std::int64_t start = 0;
    double t_wall_ms = 0.0;
    std::int64_t ref_pos = 0;
    bool recache = false;
    std::size_t cache_frames = 0;  // window + reference after the cache update
    double knot_fused_l2 = 0.0;    // ||prefix - suffix|| over the fused knot frames
    std::uint64_t score_elements = 0;
    std::uint64_t recache_score_elements = 0;
    std::int64_t last_denoised_pos = 0;
    std::vector<std::int64_t> window;  // cached positions seen by this chunk
    std::vector<KnotRecord> knots;
};

struct RolloutTrace {
    std::vector<ChunkRecord> chunks;
    std::vector<unsigned> denoise_count;  // final-step predictions per position
    std::vector<cache::CacheSnapshot> cache;
};

struct Rollout {
    std::vector<Tensor> frames;
    RolloutTrace trace;
};

/// Full streaming rollout: sliding window, reference context, temporal knots
/// and running ahead. `drive`, when given, needs frames + k rows. `reference`
/// defaults to reference_latent(cfg.seed).
Rollout generate_stream(const RolloutConfig& cfg, const model::ToyDiT& model,
                        const model::DrivingSignal* drive = nullptr,
                        const Tensor* reference = nullptr);

/// Window + reference baseline without knots or running ahead; the reference
/// stays at n0, which must lie beyond the last generated frame.
Rollout generate_baseline(const RolloutConfig& cfg, const model::ToyDiT& model,
                          const model::DrivingSignal* drive = nullptr,
                          const Tensor* reference = nullptr);

/// Closed-form self-attention logit count of the chunk starting at `start`
/// (denoise steps plus the window update; recache excluded).
std::uint64_t expected_score_elements(const RolloutConfig& cfg, const model::ModelConfig& mcfg,
                                      std::size_t start);

/// Chunk-by-chunk cached forward over a fixed frame sequence at one timestep,
/// driving the same caches as the rollout. The counterpart of
/// ToyDiT::dense_oracle for the same design's mask.
model::OracleOutput incremental_forward(const model::ToyDiT& model,
                                        std::span<const FrameLatent> frames, double t,
                                        const topology::MaskDesign& design,
                                        const FrameLatent* reference,
                                        const model::DrivingSignal* drive = nullptr);

nlohmann::json to_json(const ChunkRecord& r);
nlohmann::json to_json(const RolloutConfig& cfg);
RolloutConfig rollout_config_from_json(const nlohmann::json& j);

/// JSON lines; `header`, when not null, is written as the first line.
void write_trace_jsonl(const std::filesystem::path& path, const RolloutTrace& trace,
                       const nlohmann::json& header = nullptr);
void write_cache_trace_jsonl(const std::filesystem::path& path, const RolloutTrace& trace,
                             const nlohmann::json& header = nullptr);

}  // namespace knotforge::sched
