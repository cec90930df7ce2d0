#include "knotforge/kernels.hpp"

#include <omp.h>

#include <atomic>
#include <cstring>
#include <vector>

#include "knotforge/error.hpp"

namespace knotforge::kernels {

namespace {
// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelThreshold = 1u << 14;
}  // namespace

int max_threads() { return omp_get_max_threads(); }

void set_max_threads(int n) {
    if (n > 0) {
        omp_set_num_threads(n);
    }
}

void matmul(const float* a, const float* b, float* out, std::size_t m, std::size_t k,
            std::size_t n) {
    const bool parallel = m > 1 && m * k * n >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (parallel)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        detail::matmul_row(a + i * k, b, out + i * n, k, n);
    }
}

void attention(const float* q, const float* k, const float* v, const std::uint8_t* mask,
               float* out, AttentionDims dims) {
    const std::size_t width = dims.heads * dims.head_dim;
    const std::size_t tasks = dims.heads * dims.queries;
    const bool parallel = tasks > 1 && tasks * dims.keys * dims.head_dim >= kParallelThreshold;
    std::atomic<bool> degenerate{false};

#pragma omp parallel if (parallel)
    {
        std::vector<float> scratch(dims.keys);
#pragma omp for schedule(static)
        for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(tasks); ++t) {
            const std::size_t h = static_cast<std::size_t>(t) / dims.queries;
            const std::size_t i = static_cast<std::size_t>(t) % dims.queries;
            const std::uint8_t* mask_row = mask ? mask + i * dims.keys : nullptr;
            if (!detail::attention_row(q + i * width + h * dims.head_dim, k, v, mask_row,
                                       out + i * width + h * dims.head_dim, scratch.data(), h,
                                       dims)) {
                degenerate.store(true, std::memory_order_relaxed);
            }
        }
    }
    if (degenerate.load()) {
        throw DegenerateRowError("attention: query row has no visible key");
    }
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 const Mask* mask) {
    if (heads == 0 || q.cols() % heads != 0) {
        throw DimensionError("attention: width not divisible by head count");
    }
    if (k.cols() != q.cols() || v.cols() != q.cols() || k.rows() != v.rows()) {
        throw DimensionError("attention: q/k/v widths or key counts disagree");
    }
    if (k.rows() == 0) {
        throw DegenerateRowError("attention: empty key set");
    }
    AttentionDims dims{q.rows(), k.rows(), heads, q.cols() / heads};
    std::vector<std::uint8_t> bytes;
    if (mask != nullptr) {
        if (mask->rows() != q.rows() || mask->cols() != k.rows()) {
            throw DimensionError("attention: mask shape mismatch");
        }
        bytes.resize(mask->rows() * mask->cols());
        for (std::size_t r = 0; r < mask->rows(); ++r) {
            for (std::size_t c = 0; c < mask->cols(); ++c) {
                bytes[r * mask->cols() + c] = (*mask)(r, c) ? 1 : 0;
            }
        }
    }
    Tensor out = Tensor::matrix(q.rows(), q.cols());
    attention(q.data(), k.data(), v.data(), mask ? bytes.data() : nullptr, out.data(), dims);
    return out;
}

}  // namespace knotforge::kernels
