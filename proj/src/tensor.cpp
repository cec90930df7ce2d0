#include "knotforge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <string>

#include "knotforge/error.hpp"
#include "knotforge/kernels.hpp"

namespace knotforge {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(std::vector<std::size_t> shape, float fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size()) {
        throw DimensionError("tensor: shape product " + std::to_string(shape_product(shape_)) +
                             " != data length " + std::to_string(data_.size()));
    }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<float> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) {
            throw DimensionError("tensor: ragged rows");
        }
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t = matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        t.at(i, i) = 1.0f;
    }
    return t;
}

std::size_t Tensor::cols() const noexcept {
    if (shape_.empty()) {
        return 0;
    }
    std::size_t c = 1;
    for (std::size_t i = 1; i < shape_.size(); ++i) {
        c *= shape_[i];
    }
    return c;
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

bool Tensor::bit_equal(const Tensor& other) const noexcept {
    return shape_ == other.shape_ && data_.size() == other.data_.size() &&
           std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                             std::to_string(b.rows()) + " disagree");
    }
    Tensor out = Tensor::matrix(a.rows(), b.cols());
    kernels::matmul(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols());
    return out;
}

Tensor softmax_rows(const Tensor& x, const Mask& mask) {
    if (mask.rows() != x.rows() || mask.cols() != x.cols()) {
        throw DimensionError("softmax_rows: mask shape mismatch");
    }
    Tensor out = Tensor::matrix(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        bool any = false;
        float max_v = 0.0f;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            if (mask(r, c) && (!any || x.at(r, c) > max_v)) {
                max_v = x.at(r, c);
                any = true;
            }
        }
        if (!any) {
            throw DegenerateRowError("softmax_rows: row " + std::to_string(r) + " fully masked");
        }
        float denom = 0.0f;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            if (mask(r, c)) {
                out.at(r, c) = std::exp(x.at(r, c) - max_v);
                denom += out.at(r, c);
            }
        }
        for (std::size_t c = 0; c < x.cols(); ++c) {
            if (mask(r, c)) {
                out.at(r, c) /= denom;
            }
        }
    }
    return out;
}

Tensor softmax_rows(const Tensor& x) { return softmax_rows(x, Mask(x.rows(), x.cols(), true)); }

Tensor layer_norm_rows(const Tensor& x, float eps) {
    Tensor out = Tensor::matrix(x.rows(), x.cols());
    const float n = static_cast<float>(x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        float mean = 0.0f;
        for (float v : in) {
            mean += v;
        }
        mean /= n;
        float var = 0.0f;
        for (float v : in) {
            var += (v - mean) * (v - mean);
        }
        var /= n;
        const float inv = 1.0f / std::sqrt(var + eps);
        auto o = out.row(r);
        for (std::size_t c = 0; c < in.size(); ++c) {
            o[c] = (in[c] - mean) * inv;
        }
    }
    return out;
}

namespace {

template <typename Op>
Tensor zip(const Tensor& a, const Tensor& b, const char* name, Op op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(name) + ": shape mismatch");
    }
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out.data()[i] = op(a.data()[i], b.data()[i]);
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return zip(a, b, "add", [](float x, float y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return zip(a, b, "sub", [](float x, float y) { return x - y; });
}

Tensor scale(const Tensor& a, float s) {
    Tensor out = a;
    for (float& v : out.values()) {
        v *= s;
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    Tensor out = x;
    for (float& v : out.values()) {
        // tanh approximation
        const float inner = 0.7978845608f * (v + 0.044715f * v * v * v);
        v = 0.5f * v * (1.0f + std::tanh(inner));
    }
    return out;
}

Tensor add_row_broadcast(const Tensor& x, std::span<const float> row) {
    if (row.size() != x.cols()) {
        throw DimensionError("add_row_broadcast: width mismatch");
    }
    Tensor out = x;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto o = out.row(r);
        for (std::size_t c = 0; c < o.size(); ++c) {
            o[c] += row[c];
        }
    }
    return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) {
        return {};
    }
    const std::size_t cols = parts.front().cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) {
            throw DimensionError("concat_rows: column mismatch");
        }
        rows += p.rows();
    }
    std::vector<float> data;
    data.reserve(rows * cols);
    for (const auto& p : parts) {
        data.insert(data.end(), p.values().begin(), p.values().end());
    }
    return Tensor({rows, cols}, std::move(data));
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) {
        return {};
    }
    const std::size_t rows = parts.front().rows();
    std::size_t cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) {
            throw DimensionError("concat_cols: row mismatch");
        }
        cols += p.cols();
    }
    Tensor out = Tensor::matrix(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t c0 = 0;
        for (const auto& p : parts) {
            auto src = p.row(r);
            std::copy(src.begin(), src.end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(c0));
            c0 += p.cols();
        }
    }
    return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    if (begin > end || end > x.rows()) {
        throw IndexError("slice_rows: range out of bounds");
    }
    const std::size_t c = x.cols();
    std::vector<float> data(x.data() + begin * c, x.data() + end * c);
    return Tensor({end - begin, c}, std::move(data));
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
    if (begin > end || end > x.cols()) {
        throw IndexError("slice_cols: range out of bounds");
    }
    Tensor out = Tensor::matrix(x.rows(), end - begin);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto src = x.row(r);
        std::copy(src.begin() + static_cast<std::ptrdiff_t>(begin),
                  src.begin() + static_cast<std::ptrdiff_t>(end), out.row(r).begin());
    }
    return out;
}

double l2_norm(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.values()) {
        acc += static_cast<double>(v) * v;
    }
    return std::sqrt(acc);
}

double l2_distance(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) {
        throw DimensionError("l2_distance: size mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - b.data()[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) {
        throw DimensionError("max_abs_diff: size mismatch");
    }
    float m = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
    }
    return m;
}

}  // namespace knotforge
