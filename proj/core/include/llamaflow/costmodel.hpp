#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "llamaflow/pipeline.hpp"

namespace llamaflow::costmodel {

// Per-tile stage durations in abstract time units, all strictly positive.
struct StageTimes {
    std::uint64_t t_read = 0;
    std::uint64_t t_compute = 0;
    std::uint64_t t_write = 0;

    std::uint64_t sum() const { return t_read + t_compute + t_write; }
    std::uint64_t max() const;
};

struct PipelineEstimate {
    int n_tiles = 0;
    StageTimes times;
    std::uint64_t serial_latency = 0;
    std::uint64_t pipelined_latency = 0;
    double speedup = 1.0;
};

// n * (t_read + t_compute + t_write); throws on n < 1 or a zero stage time
std::uint64_t latency_serial(int n_tiles, const StageTimes& t);

// (t_read + t_compute + t_write) + (n - 1) * max stage, the depth-1
// three-stage pipeline bound
std::uint64_t latency_pipelined(int n_tiles, const StageTimes& t);

// Event-driven simulation of three stage resources with FIFO tile flow.
// overlap=false serializes each tile's stages behind the previous tile.
// Returns the completion time of the last write.
std::uint64_t des_simulate(int n_tiles, const StageTimes& t, bool overlap);

PipelineEstimate estimate(int n_tiles, const StageTimes& t);

// throws std::invalid_argument on an empty plan list
std::vector<PipelineEstimate> speedup_report(
    std::span<const std::pair<int, StageTimes>> plans);

// Median per-stage durations over a recorded trace, paired with its tile
// count, ready to feed the formulas above.
std::pair<int, StageTimes> stage_times_from_trace(const pipeline::StageTrace& trace);

}  // namespace llamaflow::costmodel
