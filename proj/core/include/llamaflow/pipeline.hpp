#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace llamaflow::pipeline {

// Row-tiled schedule for one matmul. Tile t covers rows
// [t*tile_rows, min((t+1)*tile_rows, total_rows)); tiles are assigned to
// workers round-robin by tile index.
struct TilePlan {
    int total_rows = 0;
    int tile_rows = 0;
    int n_tiles = 0;
    int worker_count = 0;

    int tile_begin(int t) const { return t * tile_rows; }
    int tile_end(int t) const {
        const int e = (t + 1) * tile_rows;
        return e < total_rows ? e : total_rows;
    }
};

// throws std::invalid_argument when any argument is < 1
TilePlan plan_tiles(int total_rows, int tile_rows, int worker_count);

// Stage timings for one tile, in monotonic-clock nanoseconds. start/end
// bracket the worker's handling window (compute begin .. write end); the
// read may have happened earlier on the worker's reader lane.
struct TileRecord {
    int tile_index = 0;
    int worker = 0;
    std::uint64_t read_ticks = 0;
    std::uint64_t compute_ticks = 0;
    std::uint64_t write_ticks = 0;
    std::uint64_t start_tick = 0;
    std::uint64_t end_tick = 0;
};

struct StageTrace {
    std::vector<TileRecord> tiles;
    std::string to_json() const;
};

// Synthetic per-stage busywork, used to make stage overlap observable in
// tests regardless of how fast the real stages run.
struct StageDelays {
    std::chrono::nanoseconds read{0};
    std::chrono::nanoseconds compute{0};
    std::chrono::nanoseconds write{0};
};

// Worker pool executing row-tiled matmuls as read -> compute -> write
// stages. Each worker lane owns a reader thread and two staging buffers, so
// tile t+1's weight read can proceed while tile t computes. Outputs are
// bit-identical to kernels::matmul for every (tile_rows, worker_count):
// every row is computed by exactly one worker with the fixed ascending-j
// double-precision dot product.
class PipelineExecutor {
public:
    explicit PipelineExecutor(int worker_count);
    ~PipelineExecutor();

    PipelineExecutor(const PipelineExecutor&) = delete;
    PipelineExecutor& operator=(const PipelineExecutor&) = delete;

    int worker_count() const;

    // out = W x. Requires plan.worker_count == worker_count() and out
    // disjoint from x.
    void execute_tiled_matmul(const TilePlan& plan, std::span<const float> w,
                              std::span<const float> x, std::span<float> out,
                              StageTrace* trace = nullptr);

    // Runs fn over a deterministic static partition of [0, count): worker i
    // receives one contiguous [begin, end) range. Blocks until done.
    void parallel_for(int count, const std::function<void(int, int)>& fn);

    void set_stage_delays(const StageDelays& delays);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace llamaflow::pipeline
