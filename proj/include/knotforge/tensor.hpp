#pragma once

#include <cstddef>
#include <cstdint>
#include <array>
#include <initializer_list>
#include <span>
#include <vector>

namespace knotforge {

/// Dense row-major float32 array.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, float fill = 0.0f);
    Tensor(std::vector<std::size_t> shape, std::vector<float> data);

    static Tensor matrix(std::size_t rows, std::size_t cols, float fill = 0.0f) {
        return Tensor({rows, cols}, fill);
    }
    static Tensor from_rows(std::initializer_list<std::initializer_list<float>> rows);
    static Tensor identity(std::size_t n);

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    /// Leading dimension; the remaining dimensions are flattened into cols().
    std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_.front(); }
    std::size_t cols() const noexcept;

    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }
    std::span<float> values() noexcept { return data_; }
    std::span<const float> values() const noexcept { return data_; }

    float& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    float at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

    std::span<float> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
    std::span<const float> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols(), cols()};
    }

    bool all_finite() const noexcept;

    /// Bit-level equality of shape and data.
    bool bit_equal(const Tensor& other) const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<float> data_;
};

/// Boolean matrix used for attention masks.
class Mask {
public:
    Mask() = default;
    Mask(std::size_t rows, std::size_t cols, bool fill = false)
        : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool operator()(std::size_t r, std::size_t c) const noexcept { return bits_[r * cols_ + c] != 0; }
    void set(std::size_t r, std::size_t c, bool v) noexcept { bits_[r * cols_ + c] = v ? 1 : 0; }

    friend bool operator==(const Mask&, const Mask&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::uint8_t> bits_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

// Matrix ops work on the rows() x cols() view of a tensor.

/// a[m x k] * b[k x n]. Each output element is a sequential sum over k.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Row softmax; masked entries are exactly zero. Throws DegenerateRowError on a fully masked row.
Tensor softmax_rows(const Tensor& x, const Mask& mask);
Tensor softmax_rows(const Tensor& x);

/// Per-row normalization to zero mean and unit variance (no affine terms).
Tensor layer_norm_rows(const Tensor& x, float eps = 1e-5f);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor gelu(const Tensor& x);

/// Adds a 1 x n row to every row of x.
Tensor add_row_broadcast(const Tensor& x, std::span<const float> row);

/// Stacks 2-D tensors with matching cols() along the row axis.
Tensor concat_rows(std::span<const Tensor> parts);
/// Joins 2-D tensors with matching rows() along the column axis.
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);

double l2_norm(const Tensor& x);
double l2_distance(const Tensor& a, const Tensor& b);
float max_abs_diff(const Tensor& a, const Tensor& b);

/// Counter-based generator: the output of a draw depends only on (seed, counter).
struct Rng {
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;
};

/// Philox4x32-10 block for a 64-bit key and 128-bit counter.
std::array<std::uint32_t, 4> philox4x32(std::uint64_t key, std::array<std::uint32_t, 4> ctr);

/// Standard normal samples via Box-Muller. Consumes one counter value per call.
Tensor gaussian(Rng& rng, std::vector<std::size_t> shape);

/// Uniform samples in [0, 1). Consumes one counter value per call.
std::vector<double> uniform(Rng& rng, std::size_t n);

}  // namespace knotforge
