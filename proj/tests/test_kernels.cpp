#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "knotforge/error.hpp"
#include "knotforge/kernels.hpp"
#include "knotforge/tensor.hpp"

using namespace knotforge;

namespace {

std::vector<float> draw(std::size_t n, std::uint64_t counter) {
    Rng rng{11, counter};
    const Tensor t = gaussian(rng, {n});
    return {t.data(), t.data() + n};
}

}  // namespace

TEST(Kernels, MatmulParallelMatchesSerialBitwise) {
    // large enough to take the threaded path
    const std::size_t m = 64, k = 96, n = 80;
    const auto a = draw(m * k, 0);
    const auto b = draw(k * n, 1 << 20);
    std::vector<float> p(m * n), s(m * n);
    kernels::matmul(a.data(), b.data(), p.data(), m, k, n);
    kernels::serial::matmul(a.data(), b.data(), s.data(), m, k, n);
    EXPECT_EQ(p, s);
}

TEST(Kernels, AttentionParallelMatchesSerialBitwise) {
    kernels::AttentionDims d{128, 256, 2, 16};
    const std::size_t D = d.heads * d.head_dim;
    const auto q = draw(d.queries * D, 0);
    const auto k = draw(d.keys * D, 1 << 20);
    const auto v = draw(d.keys * D, 2 << 20);
    std::vector<std::uint8_t> mask(d.queries * d.keys);
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = (i * 7919 % 5) != 0;
    std::vector<float> p(d.queries * D), s(d.queries * D);
    kernels::attention(q.data(), k.data(), v.data(), mask.data(), p.data(), d);
    kernels::serial::attention(q.data(), k.data(), v.data(), mask.data(), s.data(), d);
    EXPECT_EQ(p, s);
}

TEST(Kernels, ThreadCountDoesNotChangeResults) {
    kernels::AttentionDims d{64, 300, 2, 16};
    const std::size_t D = d.heads * d.head_dim;
    const auto q = draw(d.queries * D, 0);
    const auto k = draw(d.keys * D, 1 << 20);
    const auto v = draw(d.keys * D, 2 << 20);
    std::vector<float> one(d.queries * D), many(d.queries * D);
    const int before = kernels::max_threads();
    kernels::set_max_threads(1);
    kernels::attention(q.data(), k.data(), v.data(), nullptr, one.data(), d);
    kernels::set_max_threads(4);
    kernels::attention(q.data(), k.data(), v.data(), nullptr, many.data(), d);
    kernels::set_max_threads(before);
    EXPECT_EQ(one, many);
}

TEST(Kernels, AttentionMatchesDoubleOracle) {
    kernels::AttentionDims d{5, 9, 2, 4};
    const std::size_t D = d.heads * d.head_dim;
    const auto q = draw(d.queries * D, 0);
    const auto k = draw(d.keys * D, 1 << 20);
    const auto v = draw(d.keys * D, 2 << 20);
    std::vector<float> out(d.queries * D);
    kernels::serial::attention(q.data(), k.data(), v.data(), nullptr, out.data(), d);
    // plain softmax(q k^T / sqrt(hd)) v per head
    for (std::size_t i = 0; i < d.queries; ++i) {
        for (std::size_t h = 0; h < d.heads; ++h) {
            std::vector<double> w(d.keys);
            double z = 0;
            for (std::size_t j = 0; j < d.keys; ++j) {
                double dot = 0;
                for (std::size_t e = 0; e < d.head_dim; ++e) {
                    dot += double(q[i * D + h * 4 + e]) * k[j * D + h * 4 + e];
                }
                w[j] = std::exp(dot / 2.0);
                z += w[j];
            }
            for (std::size_t e = 0; e < d.head_dim; ++e) {
                double o = 0;
                for (std::size_t j = 0; j < d.keys; ++j) o += w[j] / z * v[j * D + h * 4 + e];
                EXPECT_NEAR(out[i * D + h * 4 + e], o, 1e-5);
            }
        }
    }
}

TEST(Kernels, FullyMaskedRowThrowsInBothVariants) {
    kernels::AttentionDims d{2, 3, 1, 4};
    const auto q = draw(8, 0);
    const auto k = draw(12, 100);
    const auto v = draw(12, 200);
    std::vector<std::uint8_t> mask{1, 1, 1, 0, 0, 0};
    std::vector<float> out(8);
    EXPECT_THROW(kernels::attention(q.data(), k.data(), v.data(), mask.data(), out.data(), d),
                 DegenerateRowError);
    EXPECT_THROW(
        kernels::serial::attention(q.data(), k.data(), v.data(), mask.data(), out.data(), d),
        DegenerateRowError);
}
