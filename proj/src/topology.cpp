#include "knotforge/topology.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "knotforge/error.hpp"
#include "knotforge/kernels.hpp"

namespace knotforge::topology {

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::GrowingCache:
            return "GrowingCache";
        case Variant::SinkWindow:
            return "SinkWindow";
        case Variant::KnotForcing:
            return "KnotForcing";
    }
    return "?";
}

Variant parse_variant(std::string_view name) {
    if (name == "GrowingCache" || name == "growing") {
        return Variant::GrowingCache;
    }
    if (name == "SinkWindow" || name == "sink") {
        return Variant::SinkWindow;
    }
    if (name == "KnotForcing" || name == "knot") {
        return Variant::KnotForcing;
    }
    throw ConfigError("unknown mask design '" + std::string(name) + "'");
}

void MaskDesign::validate() const {
    if (c < 1) {
        throw ConfigError("mask design: chunk size must be >= 1");
    }
    if (L < c) {
        throw ConfigError("mask design: window L=" + std::to_string(L) + " shorter than chunk c=" +
                          std::to_string(c));
    }
    if (k >= c) {
        throw ConfigError("mask design: knot length k=" + std::to_string(k) +
                          " must be < chunk size c=" + std::to_string(c));
    }
}

bool AttentionMask::visible(std::int64_t row_frame, std::int64_t col_frame) const {
    return allow(static_cast<std::size_t>(row_frame), col_index(col_frame));
}

bool AttentionMask::uses_reference() const {
    for (std::size_t r = 0; r < allow.rows(); ++r) {
        if (allow(r, 0)) {
            return true;
        }
    }
    return false;
}

std::vector<std::int64_t> AttentionMask::context(std::int64_t row_frame) const {
    std::vector<std::int64_t> out;
    for (std::int64_t col : cols) {
        if (visible(row_frame, col)) {
            out.push_back(col);
        }
    }
    return out;
}

AttentionMask build_mask(const MaskDesign& design, std::size_t num_frames) {
    design.validate();
    if (num_frames < design.c) {
        throw ConfigError("build_mask: need at least c=" + std::to_string(design.c) + " frames");
    }
    const auto n = static_cast<std::int64_t>(num_frames);
    const auto c = static_cast<std::int64_t>(design.c);
    const auto L = static_cast<std::int64_t>(design.L);
    const auto span = static_cast<std::int64_t>(design.span());

    AttentionMask mask;
    mask.chunk = design.c;
    mask.span = design.span();
    mask.allow = Mask(num_frames, num_frames + 1, false);
    mask.cols.push_back(kReferenceFrame);
    for (std::int64_t f = 0; f < n; ++f) {
        mask.rows.push_back(f);
        mask.cols.push_back(f);
    }

    auto allow_range = [&](std::int64_t row, std::int64_t lo, std::int64_t hi) {
        for (std::int64_t g = std::max<std::int64_t>(lo, 0); g < std::min(hi, n); ++g) {
            mask.allow.set(static_cast<std::size_t>(row), mask.col_index(g), true);
        }
    };

    for (std::int64_t f = 0; f < n; ++f) {
        const std::int64_t start = (f / c) * c;
        switch (design.variant) {
            case Variant::GrowingCache:
                allow_range(f, 0, start + c);
                break;
            case Variant::SinkWindow:
                allow_range(f, 0, std::min(static_cast<std::int64_t>(design.sink), start));
                allow_range(f, start - L, start);
                allow_range(f, start, start + c);
                break;
            case Variant::KnotForcing:
                mask.allow.set(static_cast<std::size_t>(f), mask.col_index(kReferenceFrame), true);
                allow_range(f, start - L, start);
                allow_range(f, start, start + span);
                break;
        }
    }
    return mask;
}

AttentionMask full_mask(std::size_t num_frames, bool with_reference) {
    AttentionMask mask;
    mask.chunk = num_frames;
    mask.span = num_frames;
    mask.allow = Mask(num_frames, num_frames + 1, true);
    mask.cols.push_back(kReferenceFrame);
    for (std::size_t f = 0; f < num_frames; ++f) {
        mask.rows.push_back(static_cast<std::int64_t>(f));
        mask.cols.push_back(static_cast<std::int64_t>(f));
        if (!with_reference) {
            mask.allow.set(f, 0, false);
        }
    }
    return mask;
}

double context_iou(const AttentionMask& mask, std::size_t t) {
    if (t + 1 >= mask.num_frames()) {
        throw IndexError("context_iou: t=" + std::to_string(t) + " needs t+1 < " +
                         std::to_string(mask.num_frames()));
    }
    std::size_t inter = 0;
    std::size_t uni = 0;
    for (std::size_t col = 0; col < mask.cols.size(); ++col) {
        const bool a = mask.allow(t, col);
        const bool b = mask.allow(t + 1, col);
        inter += (a && b) ? 1 : 0;
        uni += (a || b) ? 1 : 0;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

Tensor attend(const Tensor& q, const std::vector<const FrameAttentionInputs*>& ctx,
              std::size_t heads) {
    if (ctx.empty()) {
        throw DegenerateRowError("frame_contribution: ablation leaves an empty context");
    }
    std::vector<Tensor> ks;
    std::vector<Tensor> vs;
    ks.reserve(ctx.size());
    vs.reserve(ctx.size());
    for (const auto* f : ctx) {
        ks.push_back(f->k);
        vs.push_back(f->v);
    }
    return kernels::attention(q, concat_rows(ks), concat_rows(vs), heads);
}

}  // namespace

std::vector<ContributionScore> frame_contribution(const AttentionInputs& inputs,
                                                  std::int64_t anchor,
                                                  const AttentionMask& mask) {
    if (anchor < 0 || anchor >= static_cast<std::int64_t>(mask.num_frames())) {
        throw IndexError("frame_contribution: anchor " + std::to_string(anchor) + " out of range");
    }
    const FrameAttentionInputs* anchor_in = nullptr;
    for (const auto& f : inputs.frames) {
        if (f.frame == anchor) {
            anchor_in = &f;
        }
    }
    if (anchor_in == nullptr || anchor_in->q.empty()) {
        throw IndexError("frame_contribution: no query for anchor " + std::to_string(anchor));
    }

    auto in_context = [&](std::int64_t frame) {
        return frame >= kReferenceFrame && frame < static_cast<std::int64_t>(mask.num_frames()) &&
               mask.visible(anchor, frame);
    };

    std::vector<const FrameAttentionInputs*> context;
    for (const auto& f : inputs.frames) {
        if (in_context(f.frame)) {
            context.push_back(&f);
        }
    }
    const Tensor full = attend(anchor_in->q, context, inputs.heads);
    const double full_norm = l2_norm(full);

    std::vector<ContributionScore> scores;
    scores.reserve(inputs.frames.size());
    for (const auto& ablated : inputs.frames) {
        std::vector<const FrameAttentionInputs*> kept;
        for (const auto* f : context) {
            if (f != &ablated) {
                kept.push_back(f);
            }
        }
        const Tensor partial = attend(anchor_in->q, kept, inputs.heads);
        const double diff = l2_distance(full, partial);
        scores.push_back({ablated.frame, full_norm > 0.0 ? diff / full_norm : 0.0});
    }
    return scores;
}

}  // namespace knotforge::topology
