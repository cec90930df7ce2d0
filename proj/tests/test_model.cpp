#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "knotforge/error.hpp"
#include "knotforge/io.hpp"
#include "knotforge/model.hpp"
#include "knotforge/scheduler.hpp"
#include "knotforge/topology.hpp"

using namespace knotforge;
using model::FrameLatent;
using model::ToyDiT;

namespace {

std::vector<FrameLatent> noisy_frames(std::uint64_t seed, std::int64_t first, std::size_t n,
                                      double t) {
    Rng rng{seed, 500};
    std::vector<FrameLatent> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(FrameLatent::generated(gaussian(rng, {4, 8}), first + std::int64_t(i), t));
    }
    return out;
}

FrameLatent reference_at(std::int64_t pos, const model::ModelConfig& cfg) {
    return FrameLatent::condition(sched::reference_latent(1, cfg), pos);
}

}  // namespace

TEST(Model, OutputShapes) {
    const ToyDiT m(model::ModelConfig{});
    const auto chunk = noisy_frames(1, 0, 4, 750);
    const auto ref = reference_at(5, m.config());
    const auto kv_ref = m.forward_kv(std::span(&ref, 1), {}, {});
    EXPECT_EQ(kv_ref.size(), m.config().layers);
    const auto pred = m.forward_denoise(chunk, 750, {}, {}, kv_ref);
    ASSERT_EQ(pred.size(), 4u);
    for (const auto& p : pred) EXPECT_EQ(p.shape(), (std::vector<std::size_t>{4, 8}));
    auto clean = chunk;
    for (auto& f : clean) f.noise_level = 0;
    EXPECT_EQ(m.forward_kv(clean, {}, kv_ref).size(), m.config().layers * 4);
}

TEST(Model, WeightsDeterminedBySeed) {
    model::ModelConfig a, b;
    b.seed = 1;
    const auto xa = model::Weights::init(a), xa2 = model::Weights::init(a),
               xb = model::Weights::init(b);
    const auto wa = xa.named(), wa2 = xa2.named(), wb = xb.named();
    for (std::size_t i = 0; i < wa.size(); ++i) {
        EXPECT_TRUE(wa[i].second->bit_equal(*wa2[i].second)) << wa[i].first;
    }
    EXPECT_FALSE(wa[0].second->bit_equal(*wb[0].second));
}

TEST(Model, ForwardKvIsDeterministic) {
    const ToyDiT m(model::ModelConfig{});
    const auto ref = reference_at(7, m.config());
    const auto a = m.forward_kv(std::span(&ref, 1), {}, {});
    const auto b = m.forward_kv(std::span(&ref, 1), {}, {});
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_TRUE(a[i].keys.bit_equal(b[i].keys));
        EXPECT_TRUE(a[i].values.bit_equal(b[i].values));
    }
}

TEST(Model, ReferenceShiftOnlyRotatesKeys) {
    const ToyDiT m(model::ModelConfig{});
    const auto rope_cfg = m.config().rope();
    for (std::int64_t n : {5, 11, 40}) {
        for (std::int64_t s : {1, 6, 17}) {
            const auto r0 = reference_at(n, m.config());
            const auto r1 = reference_at(n + s, m.config());
            const auto a = m.forward_kv(std::span(&r0, 1), {}, {});
            const auto b = m.forward_kv(std::span(&r1, 1), {}, {});
            for (std::size_t l = 0; l < a.size(); ++l) {
                EXPECT_EQ(b[l].pos.frame_pos, n + s);
                EXPECT_LT(max_abs_diff(rope::shift_heads(a[l].keys, s, rope_cfg), b[l].keys), 1e-6f);
                EXPECT_LT(max_abs_diff(a[l].values, b[l].values), 1e-6f);
            }
        }
    }
}

TEST(Model, ZeroDriveMatchesNoDriveWithZeroCrossOutput) {
    model::ModelConfig cfg;
    cfg.zero_init_cross_out = true;
    const ToyDiT m(cfg);
    const auto chunk = noisy_frames(2, 0, 4, 500);
    const model::DrivingSignal zeros{Tensor::matrix(8, cfg.d_drive, 0.0f)};
    const auto a = m.forward_denoise(chunk, 500, {}, {}, {});
    const auto b = m.forward_denoise(chunk, 500, {}, {}, {}, &zeros);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(a[i].bit_equal(b[i]));
}

TEST(Model, DriveChangesOutputWhenProjectionIsLive) {
    const ToyDiT m(model::ModelConfig{});
    const auto chunk = noisy_frames(2, 0, 4, 500);
    Rng rng{5, 0};
    const model::DrivingSignal drive{gaussian(rng, {8, m.config().d_drive})};
    const auto a = m.forward_denoise(chunk, 500, {}, {}, {});
    const auto b = m.forward_denoise(chunk, 500, {}, {}, {}, &drive);
    EXPECT_GT(max_abs_diff(a[0], b[0]), 0.0f);
}

TEST(Model, KnotSlotIsConditionedAndStillPredicted) {
    const ToyDiT m(model::ModelConfig{});
    const auto chunk = noisy_frames(3, 9, 4, 1000);
    Rng rng{6, 0};
    const FrameLatent knot = FrameLatent::generated(gaussian(rng, {4, 8}), 9, 0);
    const auto with = m.forward_denoise(chunk, 1000, std::span(&knot, 1), {}, {});
    const auto without = m.forward_denoise(chunk, 1000, {}, {}, {});
    ASSERT_EQ(with.size(), 4u);
    EXPECT_GT(max_abs_diff(with[0], without[0]), 0.0f);
    EXPECT_TRUE(with[0].all_finite());
}

TEST(Model, KnotPositionMustMatchLeadingSlot) {
    const ToyDiT m(model::ModelConfig{});
    const auto chunk = noisy_frames(3, 9, 4, 1000);
    const FrameLatent knot = FrameLatent::generated(Tensor::matrix(4, 8), 10, 0);
    EXPECT_THROW(m.forward_denoise(chunk, 1000, std::span(&knot, 1), {}, {}), PositionError);
}

TEST(Model, ReferenceCollidingWithChunkThrows) {
    const ToyDiT m(model::ModelConfig{});
    const auto ref = reference_at(2, m.config());
    const auto kv_ref = m.forward_kv(std::span(&ref, 1), {}, {});
    const auto chunk = noisy_frames(4, 0, 4, 750);
    EXPECT_THROW(m.forward_denoise(chunk, 750, {}, {}, kv_ref), PositionError);
}

TEST(Model, ChunkShapeMismatchThrows) {
    const ToyDiT m(model::ModelConfig{});
    auto chunk = noisy_frames(4, 0, 2, 750);
    chunk[1].tokens = Tensor::matrix(3, 8);
    EXPECT_THROW(m.forward_denoise(chunk, 750, {}, {}, {}), DimensionError);
}

TEST(Model, DenseOracleMatchesChunkedForward) {
    const ToyDiT m(model::ModelConfig{});
    const topology::MaskDesign d{};
    auto frames = noisy_frames(7, 0, 9, 500);
    const auto ref = reference_at(20, m.config());
    const auto dense = m.dense_oracle(frames, 500, topology::build_mask(d, 9), &ref);
    const auto inc = sched::incremental_forward(m, frames, 500, d, &ref);
    for (std::size_t f = 0; f < 9; ++f) {
        EXPECT_LT(max_abs_diff(dense.predictions[f], inc.predictions[f]), 1e-5f) << f;
        ASSERT_EQ(dense.knot[f].has_value(), inc.knot[f].has_value());
        if (dense.knot[f]) EXPECT_LT(max_abs_diff(*dense.knot[f], *inc.knot[f]), 1e-5f);
    }
}

TEST(Model, DenseSingleFrameMatchesForwardDenoise) {
    const ToyDiT m(model::ModelConfig{});
    const auto frames = noisy_frames(8, 0, 1, 250);
    const auto dense = m.dense_oracle(frames, 250, topology::full_mask(1, false));
    const auto direct = m.forward_denoise(frames, 250, {}, {}, {});
    EXPECT_LT(max_abs_diff(dense.predictions[0], direct[0]), 1e-6f);
}

TEST(Model, ProbeReturnsRotatedInputsPerFrame) {
    const ToyDiT m(model::ModelConfig{});
    auto frames = noisy_frames(9, 0, 5, 0);
    const auto ref = reference_at(8, m.config());
    const auto in = m.attention_probe(frames, &ref);
    ASSERT_EQ(in.frames.size(), 6u);
    EXPECT_EQ(in.heads, 2u);
    std::set<std::int64_t> ids;
    for (const auto& f : in.frames) {
        ids.insert(f.frame);
        EXPECT_EQ(f.k.shape(), (std::vector<std::size_t>{4, 32}));
    }
    EXPECT_TRUE(ids.count(-1));
}

TEST(WeightsIo, DumpLoadRoundTrip) {
    model::ModelConfig cfg;
    cfg.seed = 77;
    cfg.layers = 3;
    const ToyDiT m(cfg);
    const auto stem = std::filesystem::path(testing::TempDir()) / "kf_weights";
    io::save_weights(m, stem);
    const ToyDiT back = io::load_weights(stem);
    EXPECT_EQ(back.config(), cfg);
    const auto a = m.weights().named();
    const auto b = back.weights().named();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].first, b[i].first);
        EXPECT_TRUE(a[i].second->bit_equal(*b[i].second)) << a[i].first;
    }
    EXPECT_EQ(std::filesystem::file_size(stem.string() + ".bin") % 4, 0u);
}

TEST(WeightsIo, FramesRoundTrip) {
    Rng rng{1, 0};
    std::vector<Tensor> frames;
    for (int i = 0; i < 5; ++i) frames.push_back(gaussian(rng, {4, 8}));
    const auto stem = std::filesystem::path(testing::TempDir()) / "kf_frames";
    io::write_frames(stem, frames);
    const auto back = io::read_frames(stem);
    ASSERT_EQ(back.size(), frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) EXPECT_TRUE(back[i].bit_equal(frames[i]));
}

TEST(WeightsIo, ShapeMismatchRejected) {
    const ToyDiT m(model::ModelConfig{});
    const auto stem = std::filesystem::path(testing::TempDir()) / "kf_weights_bad";
    io::save_weights(m, stem);
    auto blob = io::read_blob(stem);
    blob.sidecar["model_config"]["heads"] = 3;
    std::vector<std::pair<std::string, const Tensor*>> named;
    for (const auto& [n, t] : blob.tensors) named.emplace_back(n, &t);
    io::write_blob(stem, named, {{"model_config", blob.sidecar["model_config"]}});
    EXPECT_THROW(io::load_weights(stem), Error);
}
