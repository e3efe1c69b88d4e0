// Microbenchmarks of the fused operators against their unfused
// compositions at stories15M shapes (dim 288, hidden 768, head size 48).

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "llamaflow/kernels.hpp"

namespace k = llamaflow::kernels;

namespace {

constexpr int kDim = 288;
constexpr int kHidden = 768;
constexpr int kHeadSize = 48;

std::vector<float> random_vec(std::size_t n, std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    std::vector<float> v(n);
    for (float& f : v) f = dist(rng);
    return v;
}

struct QkvFixture {
    std::vector<float> wq = random_vec(std::size_t(kDim) * kDim, 1);
    std::vector<float> wk = random_vec(std::size_t(kDim) * kDim, 2);
    std::vector<float> wv = random_vec(std::size_t(kDim) * kDim, 3);
    std::vector<float> nw = random_vec(kDim, 4);
    std::vector<float> x = random_vec(kDim, 5);
};

struct FfnFixture {
    std::vector<float> w1 = random_vec(std::size_t(kHidden) * kDim, 6);
    std::vector<float> w2 = random_vec(std::size_t(kDim) * kHidden, 7);
    std::vector<float> w3 = random_vec(std::size_t(kHidden) * kDim, 8);
    std::vector<float> nw = random_vec(kDim, 9);
    std::vector<float> x = random_vec(kDim, 10);
};

}  // namespace

static void BM_QkvUnfused(benchmark::State& state) {
    QkvFixture f;
    std::vector<float> xb(kDim), q(kDim), kk(kDim), v(kDim);
    for (auto _ : state) {
        k::rmsnorm(xb, f.x, f.nw);
        k::matmul(q, f.wq, xb);
        k::matmul(kk, f.wk, xb);
        k::matmul(v, f.wv, xb);
        benchmark::DoNotOptimize(q.data());
    }
}
BENCHMARK(BM_QkvUnfused);

static void BM_QkvFused(benchmark::State& state) {
    QkvFixture f;
    std::vector<float> q(kDim), kk(kDim), v(kDim), scratch(kDim);
    const std::span<const float> ws[3] = {f.wq, f.wk, f.wv};
    const std::span<float> outs[3] = {q, kk, v};
    for (auto _ : state) {
        k::fused_rmsnorm_matmuls(f.x, f.nw, ws, outs, scratch);
        benchmark::DoNotOptimize(q.data());
    }
}
BENCHMARK(BM_QkvFused);

static void BM_AttentionReference(benchmark::State& state) {
    const int pos = int(state.range(0));
    const auto keys = random_vec(std::size_t(pos + 1) * kHeadSize, 11);
    const auto vals = random_vec(std::size_t(pos + 1) * kHeadSize, 12);
    const auto q = random_vec(kHeadSize, 13);
    std::vector<float> out(kHeadSize), scores(std::size_t(pos) + 1);
    for (auto _ : state) {
        k::attention_head_reference(out, q, keys.data(), vals.data(), kHeadSize,
                                    pos, scores);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_AttentionReference)->Arg(15)->Arg(63)->Arg(255);

static void BM_AttentionOnline(benchmark::State& state) {
    const int pos = int(state.range(0));
    const auto keys = random_vec(std::size_t(pos + 1) * kHeadSize, 11);
    const auto vals = random_vec(std::size_t(pos + 1) * kHeadSize, 12);
    const auto q = random_vec(kHeadSize, 13);
    std::vector<float> out(kHeadSize);
    for (auto _ : state) {
        k::fused_attention_online(out, q, keys.data(), vals.data(), kHeadSize, pos);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_AttentionOnline)->Arg(15)->Arg(63)->Arg(255);

static void BM_FfnUnfused(benchmark::State& state) {
    FfnFixture f;
    std::vector<float> xb(kDim), a(kHidden), b(kHidden), g(kHidden), out(kDim);
    for (auto _ : state) {
        k::rmsnorm(xb, f.x, f.nw);
        k::matmul(a, f.w1, xb);
        k::matmul(b, f.w3, xb);
        k::swiglu(g, a, b);
        k::matmul(out, f.w2, g);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_FfnUnfused);

static void BM_FfnFused(benchmark::State& state) {
    FfnFixture f;
    std::vector<float> out(kDim), h1(kHidden), h3(kHidden), scratch(kDim);
    for (auto _ : state) {
        k::fused_ffn(out, f.x, f.nw, f.w1, f.w2, f.w3, h1, h3, scratch);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_FfnFused);

BENCHMARK_MAIN();
