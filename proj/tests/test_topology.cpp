#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "knotforge/error.hpp"
#include "knotforge/topology.hpp"
#include "oracles.hpp"

using namespace knotforge;
using namespace knotforge::topology;

namespace {

std::set<std::int64_t> as_set(const std::vector<std::int64_t>& v) { return {v.begin(), v.end()}; }

FrameAttentionInputs random_frame(Rng& rng, std::int64_t frame, std::size_t tokens,
                                  std::size_t width) {
    return {frame, gaussian(rng, {tokens, width}), gaussian(rng, {tokens, width}),
            gaussian(rng, {tokens, width})};
}

}  // namespace

TEST(Topology, ContextsMatchRuleOracle) {
    for (auto v : {Variant::GrowingCache, Variant::SinkWindow, Variant::KnotForcing}) {
        for (std::size_t c = 1; c <= 3; ++c) {
            for (std::size_t L = c; L <= 7; ++L) {
                const MaskDesign d{v, c, L, c > 1 ? 1u : 0u, c};
                const std::size_t n = 5 * c + 1;
                const auto mask = build_mask(d, n);
                for (std::size_t f = 0; f < n; ++f) {
                    const auto f64 = static_cast<std::int64_t>(f);
                    EXPECT_EQ(as_set(mask.context(f64)), oracle::context_set(d, n, f64))
                        << to_string(v) << " c=" << c << " L=" << L << " f=" << f;
                }
            }
        }
    }
}

TEST(Topology, KnotForcingContextsAtBoundary) {
    const auto mask = build_mask({Variant::KnotForcing, 3, 6, 1, 3}, 15);
    std::vector<std::int64_t> c8{-1, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::vector<std::int64_t> c9{-1, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
    EXPECT_EQ(mask.context(8), c8);
    EXPECT_EQ(mask.context(9), c9);
}

TEST(Topology, BoundaryIouExample) {
    const auto mask = build_mask({Variant::KnotForcing, 3, 6, 1, 3}, 15);
    EXPECT_NEAR(context_iou(mask, 8), 4.0 / 7.0, 1e-12);
    EXPECT_EQ(context_iou(mask, 8),
              oracle::set_iou(oracle::context_set({Variant::KnotForcing, 3, 6, 1, 3}, 15, 8),
                              oracle::context_set({Variant::KnotForcing, 3, 6, 1, 3}, 15, 9)));
}

TEST(Topology, FullMaskIouIsOne) {
    const auto mask = full_mask(10, true);
    for (std::size_t t = 0; t + 1 < 10; ++t) EXPECT_EQ(context_iou(mask, t), 1.0);
}

TEST(Topology, RowsWithinAChunkAgree) {
    for (auto v : {Variant::GrowingCache, Variant::SinkWindow, Variant::KnotForcing}) {
        const auto mask = build_mask({v, 3, 6, 1, 3}, 18);
        for (std::size_t f = 0; f < 18; ++f) {
            EXPECT_EQ(mask.context(f), mask.context(f / 3 * 3));
            EXPECT_FALSE(mask.context(f).empty());
        }
    }
}

TEST(Topology, SinkWindowIsCausal) {
    const auto mask = build_mask({Variant::SinkWindow, 3, 3, 0, 5}, 12);
    for (std::int64_t f = 0; f < 12; ++f) {
        for (auto g : mask.context(f)) EXPECT_LT(g, f / 3 * 3 + 3);
    }
    EXPECT_FALSE(mask.uses_reference());
}

TEST(Topology, InvalidDesignsThrow) {
    EXPECT_THROW(build_mask({Variant::KnotForcing, 3, 2, 1, 3}, 9), ConfigError);
    EXPECT_THROW(build_mask({Variant::KnotForcing, 3, 6, 3, 3}, 9), ConfigError);
    EXPECT_THROW(build_mask({Variant::KnotForcing, 0, 6, 0, 3}, 9), ConfigError);
    EXPECT_THROW(build_mask({Variant::KnotForcing, 3, 6, 1, 3}, 2), ConfigError);
    EXPECT_THROW(context_iou(build_mask({}, 9), 8), IndexError);
}

TEST(Topology, ParseVariantNames) {
    EXPECT_EQ(parse_variant("knot"), Variant::KnotForcing);
    EXPECT_EQ(parse_variant("SinkWindow"), Variant::SinkWindow);
    EXPECT_EQ(parse_variant("growing"), Variant::GrowingCache);
    EXPECT_THROW(parse_variant("dense"), ConfigError);
}

TEST(Contribution, OutsideContextScoresExactlyZero) {
    Rng rng{1, 0};
    const auto mask = build_mask({}, 15);
    AttentionInputs in{2, {}};
    for (std::int64_t f = -1; f < 15; ++f) in.frames.push_back(random_frame(rng, f, 4, 32));
    const auto scores = frame_contribution(in, 9, mask);
    ASSERT_EQ(scores.size(), in.frames.size());
    const auto ctx = as_set(mask.context(9));
    for (const auto& s : scores) {
        if (!ctx.count(s.frame)) {
            EXPECT_EQ(s.score, 0.0) << s.frame;
        } else {
            EXPECT_GT(s.score, 0.0) << s.frame;
        }
    }
}

TEST(Contribution, MatchesDoubleOracle) {
    Rng rng{2, 0};
    const auto mask = build_mask({}, 15);
    AttentionInputs in{2, {}};
    std::vector<oracle::ProbeFrame> probe;
    for (std::int64_t f = -1; f < 15; ++f) {
        auto fr = random_frame(rng, f, 4, 32);
        probe.push_back({f, {fr.q.data(), fr.q.data() + fr.q.size()},
                         {fr.k.data(), fr.k.data() + fr.k.size()},
                         {fr.v.data(), fr.v.data() + fr.v.size()}});
        in.frames.push_back(std::move(fr));
    }
    const auto scores = frame_contribution(in, 9, mask);
    const auto ref = oracle::contribution(probe, 9, as_set(mask.context(9)), 4, 2, 16);
    for (std::size_t i = 0; i < scores.size(); ++i) EXPECT_NEAR(scores[i].score, ref[i], 1e-5);
}

TEST(Contribution, DuplicatedFrameScoresBelowUniqueFrame) {
    // Frames 1 and 2 carry identical keys and values; frame 3 has its own keys
    // arranged so it receives the same attention weight as frame 1.
    const std::size_t width = 4;
    Tensor q = Tensor::matrix(1, width, 0.0f);
    q.at(0, 0) = 1.0f;
    auto frame = [&](std::int64_t id, float key0, float value) {
        FrameAttentionInputs f{id, id == 0 ? q : Tensor{}, Tensor::matrix(1, width),
                               Tensor::matrix(1, width, value)};
        f.k.at(0, 0) = key0;
        return f;
    };
    AttentionInputs in{1, {frame(0, 0.0f, 0.0f), frame(1, 1.0f, 2.0f), frame(2, 1.0f, 2.0f),
                           frame(3, 1.0f, -2.0f)}};
    const auto mask = full_mask(4, false);
    const auto s = frame_contribution(in, 0, mask);
    EXPECT_LT(s[1].score, s[3].score);
    EXPECT_EQ(s[1].score, s[2].score);
}

TEST(Contribution, PermutationKeepsScoreSum) {
    Rng rng{3, 0};
    const auto mask = build_mask({}, 15);
    AttentionInputs in{2, {}};
    for (std::int64_t f = -1; f < 15; ++f) in.frames.push_back(random_frame(rng, f, 4, 32));
    const auto a = frame_contribution(in, 9, mask);
    AttentionInputs perm = in;
    std::reverse(perm.frames.begin(), perm.frames.end());
    std::swap(perm.frames[2], perm.frames[7]);
    const auto b = frame_contribution(perm, 9, mask);
    double sa = 0, sb = 0;
    for (const auto& s : a) sa += s.score;
    for (const auto& s : b) sb += s.score;
    EXPECT_NEAR(sa, sb, 1e-6);
}

TEST(Contribution, EmptyAblatedContextThrows) {
    Rng rng{4, 0};
    const auto mask = build_mask({Variant::GrowingCache, 1, 1, 0, 0}, 3);
    AttentionInputs in{1, {random_frame(rng, 0, 2, 4)}};
    EXPECT_THROW(frame_contribution(in, 0, mask), DegenerateRowError);
}
