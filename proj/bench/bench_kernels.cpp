#include <random>

#include <benchmark/benchmark.h>

#include "icm/kernels.hpp"

namespace {

icm::Tensor random_tensor(std::vector<int> shape, unsigned seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    icm::Tensor t(std::move(shape));
    for (auto& v : t.storage())
        v = n(rng);
    return t;
}

template <bool Parallel>
void BM_conv2d(benchmark::State& state)
{
    const int c = static_cast<int>(state.range(0));
    const int s = static_cast<int>(state.range(1));
    const auto x = random_tensor({c, s, s}, 1);
    const auto w = random_tensor({c, c, 3, 3}, 2);
    const auto b = random_tensor({c}, 3);
    for (auto _ : state) {
        if constexpr (Parallel)
            benchmark::DoNotOptimize(icm::kernels::conv2d(x, w, b, {}));
        else
            benchmark::DoNotOptimize(icm::kernels::serial::conv2d(x, w, b, {}));
    }
}

template <bool Parallel>
void BM_cosine_attention(benchmark::State& state)
{
    const int n = static_cast<int>(state.range(0));
    const auto f = random_tensor({n, 16}, 4);
    for (auto _ : state) {
        if constexpr (Parallel)
            benchmark::DoNotOptimize(icm::kernels::cosine_attention(f, 0.1));
        else
            benchmark::DoNotOptimize(icm::kernels::serial::cosine_attention(f, 0.1));
    }
}

template <bool Parallel>
void BM_resize(benchmark::State& state)
{
    const int s = static_cast<int>(state.range(0));
    const auto x = random_tensor({8, s, s}, 5);
    for (auto _ : state) {
        if constexpr (Parallel)
            benchmark::DoNotOptimize(icm::kernels::resize_bilinear(x, 2 * s, 2 * s));
        else
            benchmark::DoNotOptimize(icm::kernels::serial::resize_bilinear(x, 2 * s, 2 * s));
    }
}

} // namespace

BENCHMARK(BM_conv2d<false>)->Args({16, 64})->Args({32, 128});
BENCHMARK(BM_conv2d<true>)->Args({16, 64})->Args({32, 128});
BENCHMARK(BM_cosine_attention<false>)->Arg(256)->Arg(1024);
BENCHMARK(BM_cosine_attention<true>)->Arg(256)->Arg(1024);
BENCHMARK(BM_resize<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_resize<true>)->Arg(64)->Arg(256);

BENCHMARK_MAIN();
