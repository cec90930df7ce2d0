#include "knotforge/rope.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "knotforge/error.hpp"

namespace knotforge::rope {

void RopeConfig::validate() const {
    if (head_dim == 0 || head_dim % 2 != 0) {
        throw ConfigError("rope: head_dim must be even and positive, got " +
                          std::to_string(head_dim));
    }
    if (!(base > 1.0)) {
        throw ConfigError("rope: base must exceed 1");
    }
}

namespace {

void rotate_blocks(Tensor& x, double pos, const RopeConfig& cfg) {
    if (pos == 0.0) {
        return;
    }
    const std::size_t half = cfg.head_dim / 2;
    std::vector<double> cos_t(half);
    std::vector<double> sin_t(half);
    for (std::size_t j = 0; j < half; ++j) {
        const double inv_freq =
            std::pow(cfg.base, -2.0 * static_cast<double>(j) / static_cast<double>(cfg.head_dim));
        const double angle = pos * inv_freq;
        cos_t[j] = std::cos(angle);
        sin_t[j] = std::sin(angle);
    }
    const std::size_t blocks = x.cols() / cfg.head_dim;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = x.row(r);
        for (std::size_t b = 0; b < blocks; ++b) {
            float* p = row.data() + b * cfg.head_dim;
            for (std::size_t j = 0; j < half; ++j) {
                const double a = p[2 * j];
                const double c = p[2 * j + 1];
                p[2 * j] = static_cast<float>(a * cos_t[j] - c * sin_t[j]);
                p[2 * j + 1] = static_cast<float>(a * sin_t[j] + c * cos_t[j]);
            }
        }
    }
}

}  // namespace

Tensor apply(const Tensor& x, PositionIndex pos, const RopeConfig& cfg) {
    cfg.validate();
    if (x.cols() != cfg.head_dim) {
        throw DimensionError("rope: row width " + std::to_string(x.cols()) +
                             " != head_dim " + std::to_string(cfg.head_dim));
    }
    if (pos.frame_pos < 0) {
        throw IndexError("rope: negative frame position");
    }
    Tensor out = x;
    rotate_blocks(out, static_cast<double>(pos.frame_pos), cfg);
    return out;
}

Tensor apply_heads(const Tensor& x, PositionIndex pos, const RopeConfig& cfg) {
    cfg.validate();
    if (x.cols() % cfg.head_dim != 0) {
        throw DimensionError("rope: width not a multiple of head_dim");
    }
    if (pos.frame_pos < 0) {
        throw IndexError("rope: negative frame position");
    }
    Tensor out = x;
    rotate_blocks(out, static_cast<double>(pos.frame_pos), cfg);
    return out;
}

Tensor shift_heads(const Tensor& x, std::int64_t delta, const RopeConfig& cfg) {
    cfg.validate();
    if (x.cols() % cfg.head_dim != 0) {
        throw DimensionError("rope: width not a multiple of head_dim");
    }
    Tensor out = x;
    rotate_blocks(out, static_cast<double>(delta), cfg);
    return out;
}

}  // namespace knotforge::rope
