#include <cstdint>
#include <vector>

#include <benchmark/benchmark.h>

#include "knotforge/kernels.hpp"
#include "knotforge/tensor.hpp"

using namespace knotforge;

namespace {

std::vector<float> random_floats(std::size_t n, std::uint64_t counter) {
    Rng rng{7, counter};
    const Tensor t = gaussian(rng, {n});
    return {t.data(), t.data() + n};
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_floats(n * n, 0);
    const auto b = random_floats(n * n, 1 << 20);
    std::vector<float> out(n * n);
    for (auto _ : state) {
        if constexpr (Parallel) {
            kernels::matmul(a.data(), b.data(), out.data(), n, n, n);
        } else {
            kernels::serial::matmul(a.data(), b.data(), out.data(), n, n, n);
        }
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}

template <bool Parallel>
void BM_Attention(benchmark::State& state) {
    kernels::AttentionDims dims;
    dims.queries = static_cast<std::size_t>(state.range(0));
    dims.keys = static_cast<std::size_t>(state.range(1));
    dims.heads = 2;
    dims.head_dim = 16;
    const std::size_t d = dims.heads * dims.head_dim;
    const auto q = random_floats(dims.queries * d, 0);
    const auto k = random_floats(dims.keys * d, 1 << 20);
    const auto v = random_floats(dims.keys * d, 2 << 20);
    std::vector<float> out(dims.queries * d);
    for (auto _ : state) {
        if constexpr (Parallel) {
            kernels::attention(q.data(), k.data(), v.data(), nullptr, out.data(), dims);
        } else {
            kernels::serial::attention(q.data(), k.data(), v.data(), nullptr, out.data(), dims);
        }
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() *
                            static_cast<int64_t>(dims.queries * dims.keys * dims.heads));
}

}  // namespace

BENCHMARK(BM_Matmul<false>)->Name("matmul/serial")->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(BM_Matmul<true>)->Name("matmul/omp")->Arg(32)->Arg(128)->Arg(256);
// toy chunk (16 query tokens over 11 frames) and a larger one
BENCHMARK(BM_Attention<false>)->Name("attention/serial")->Args({16, 44})->Args({512, 2048});
BENCHMARK(BM_Attention<true>)->Name("attention/omp")->Args({16, 44})->Args({512, 2048});

BENCHMARK_MAIN();
