#pragma once

// Hot loops of the engine. Every kernel has an OpenMP version (the one the
// engine calls) and a serial reference in kernels::serial. Both compute each
// output element with the same sequential reduction, so their results are
// bit-identical regardless of thread count.

#include <cstddef>
#include <cstdint>

#include "knotforge/tensor.hpp"

namespace knotforge::kernels {

struct AttentionDims {
    std::size_t queries = 0;
    std::size_t keys = 0;
    std::size_t heads = 0;
    std::size_t head_dim = 0;
};

// out[m x n] = a[m x k] * b[k x n]
void matmul(const float* a, const float* b, float* out, std::size_t m, std::size_t k,
            std::size_t n);

// Multi-head scaled dot-product attention. q is [queries x heads*head_dim],
// k and v are [keys x heads*head_dim], out is [queries x heads*head_dim].
// `mask` is an optional [queries x keys] byte matrix shared by all heads.
// Throws DegenerateRowError if some query row has no visible key.
void attention(const float* q, const float* k, const float* v, const std::uint8_t* mask,
               float* out, AttentionDims dims);

namespace serial {
void matmul(const float* a, const float* b, float* out, std::size_t m, std::size_t k,
            std::size_t n);
void attention(const float* q, const float* k, const float* v, const std::uint8_t* mask,
               float* out, AttentionDims dims);
}  // namespace serial

/// Number of threads the parallel kernels will use.
int max_threads();
/// Caps the thread count; 0 leaves the OpenMP default.
void set_max_threads(int n);

/// Tensor-level attention over the parallel kernel.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 const Mask* mask = nullptr);

namespace detail {

// Shared by both variants so serial and parallel rows are computed identically.
// Returns false if every key of the row is masked.
bool attention_row(const float* q, const float* k, const float* v, const std::uint8_t* mask_row,
                   float* out, float* scratch, std::size_t head, const AttentionDims& dims);

inline void matmul_row(const float* a_row, const float* b, float* out_row, std::size_t k,
                       std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) {
        float acc = 0.0f;
        for (std::size_t p = 0; p < k; ++p) {
            acc += a_row[p] * b[p * n + j];
        }
        out_row[j] = acc;
    }
}

}  // namespace detail

}  // namespace knotforge::kernels
