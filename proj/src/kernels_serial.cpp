#include "knotforge/kernels.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "knotforge/error.hpp"

namespace knotforge::kernels {

namespace detail {

bool attention_row(const float* q, const float* k, const float* v, const std::uint8_t* mask_row,
                   float* out, float* scratch, std::size_t head, const AttentionDims& dims) {
    const std::size_t width = dims.heads * dims.head_dim;
    const std::size_t offset = head * dims.head_dim;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dims.head_dim));

    float max_logit = -std::numeric_limits<float>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < dims.keys; ++j) {
        if (mask_row != nullptr && mask_row[j] == 0) {
            continue;
        }
        const float* kj = k + j * width + offset;
        float dot = 0.0f;
        for (std::size_t d = 0; d < dims.head_dim; ++d) {
            dot += q[d] * kj[d];
        }
        scratch[j] = dot * scale;
        if (!any || scratch[j] > max_logit) {
            max_logit = scratch[j];
        }
        any = true;
    }
    if (!any) {
        return false;
    }

    float denom = 0.0f;
    for (std::size_t j = 0; j < dims.keys; ++j) {
        if (mask_row != nullptr && mask_row[j] == 0) {
            scratch[j] = 0.0f;
            continue;
        }
        scratch[j] = std::exp(scratch[j] - max_logit);
        denom += scratch[j];
    }

    for (std::size_t d = 0; d < dims.head_dim; ++d) {
        out[d] = 0.0f;
    }
    for (std::size_t j = 0; j < dims.keys; ++j) {
        if (mask_row != nullptr && mask_row[j] == 0) {
            continue;
        }
        const float w = scratch[j] / denom;
        const float* vj = v + j * width + offset;
        for (std::size_t d = 0; d < dims.head_dim; ++d) {
            out[d] += w * vj[d];
        }
    }
    return true;
}

}  // namespace detail

namespace serial {

void matmul(const float* a, const float* b, float* out, std::size_t m, std::size_t k,
            std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        detail::matmul_row(a + i * k, b, out + i * n, k, n);
    }
}

void attention(const float* q, const float* k, const float* v, const std::uint8_t* mask,
               float* out, AttentionDims dims) {
    const std::size_t width = dims.heads * dims.head_dim;
    std::vector<float> scratch(dims.keys);
    for (std::size_t h = 0; h < dims.heads; ++h) {
        for (std::size_t i = 0; i < dims.queries; ++i) {
            const std::uint8_t* mask_row = mask ? mask + i * dims.keys : nullptr;
            if (!detail::attention_row(q + i * width + h * dims.head_dim, k, v, mask_row,
                                       out + i * width + h * dims.head_dim, scratch.data(), h,
                                       dims)) {
                throw DegenerateRowError("attention: query row has no visible key");
            }
        }
    }
}

}  // namespace serial

}  // namespace knotforge::kernels
