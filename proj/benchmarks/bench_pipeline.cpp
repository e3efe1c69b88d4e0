// Tiled-matmul executor throughput across tile sizes and worker counts,
// compared with the plain single-pass kernel.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "llamaflow/kernels.hpp"
#include "llamaflow/pipeline.hpp"

namespace pl = llamaflow::pipeline;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    std::vector<float> v(n);
    for (float& f : v) f = dist(rng);
    return v;
}

}  // namespace

static void BM_PlainMatmul(benchmark::State& state) {
    const int rows = int(state.range(0));
    const int cols = 288;
    const auto w = random_vec(std::size_t(rows) * cols, 1);
    const auto x = random_vec(cols, 2);
    std::vector<float> out(rows);
    for (auto _ : state) {
        llamaflow::kernels::matmul(out, w, x);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_PlainMatmul)->Arg(288)->Arg(768)->Arg(32000);

static void BM_TiledMatmul(benchmark::State& state) {
    const int rows = int(state.range(0));
    const int tile_rows = int(state.range(1));
    const int workers = int(state.range(2));
    const int cols = 288;
    const auto w = random_vec(std::size_t(rows) * cols, 1);
    const auto x = random_vec(cols, 2);
    std::vector<float> out(rows);

    pl::PipelineExecutor exec(workers);
    const auto plan = pl::plan_tiles(rows, tile_rows, workers);
    for (auto _ : state) {
        exec.execute_tiled_matmul(plan, w, x, out);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_TiledMatmul)
    ->Args({288, 32, 1})
    ->Args({288, 64, 1})
    ->Args({288, 32, 2})
    ->Args({288, 32, 4})
    ->Args({768, 32, 1})
    ->Args({768, 32, 4})
    ->Args({32000, 32, 1})
    ->Args({32000, 256, 1})
    ->Args({32000, 32, 4})
    ->Args({32000, 256, 4});

BENCHMARK_MAIN();
