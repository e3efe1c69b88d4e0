#include "llamaflow/costmodel.hpp"

#include <algorithm>
#include <queue>
#include <stdexcept>

namespace llamaflow::costmodel {

namespace {

void check(int n_tiles, const StageTimes& t) {
    if (n_tiles < 1)
        throw std::invalid_argument("cost model: tile count must be >= 1");
    if (t.t_read == 0 || t.t_compute == 0 || t.t_write == 0)
        throw std::invalid_argument("cost model: stage times must be positive");
}

}  // namespace

std::uint64_t StageTimes::max() const {
    return std::max(t_read, std::max(t_compute, t_write));
}

std::uint64_t latency_serial(int n_tiles, const StageTimes& t) {
    check(n_tiles, t);
    return std::uint64_t(n_tiles) * t.sum();
}

std::uint64_t latency_pipelined(int n_tiles, const StageTimes& t) {
    check(n_tiles, t);
    return t.sum() + std::uint64_t(n_tiles - 1) * t.max();
}

std::uint64_t des_simulate(int n_tiles, const StageTimes& t, bool overlap) {
    check(n_tiles, t);

    // stage 0 = read, 1 = compute, 2 = write; each a single resource with a
    // FIFO queue of tiles that finished the previous stage
    struct Event {
        std::uint64_t time;
        int stage;
        int tile;
        bool operator>(const Event& o) const {
            if (time != o.time) return time > o.time;
            if (stage != o.stage) return stage > o.stage;
            return tile > o.tile;
        }
    };

    const std::uint64_t dur[3] = {t.t_read, t.t_compute, t.t_write};
    std::priority_queue<Event, std::vector<Event>, std::greater<Event>> events;
    std::queue<int> ready[3];
    std::uint64_t busy_until[3] = {0, 0, 0};
    bool busy[3] = {false, false, false};
    std::uint64_t finished_writes = 0;
    std::uint64_t last_write_done = 0;
    int next_tile_admitted = 0;  // overlap=false: tiles enter one at a time

    auto try_start = [&](int stage, std::uint64_t now) {
        if (busy[stage] || ready[stage].empty()) return;
        const int tile = ready[stage].front();
        ready[stage].pop();
        busy[stage] = true;
        busy_until[stage] = now + dur[stage];
        events.push({busy_until[stage], stage, tile});
    };

    auto admit = [&](std::uint64_t now) {
        if (overlap) {
            while (next_tile_admitted < n_tiles) ready[0].push(next_tile_admitted++);
        } else if (next_tile_admitted < n_tiles) {
            // strictly serial: a tile enters only when the machine is idle
            ready[0].push(next_tile_admitted++);
        }
        try_start(0, now);
    };

    admit(0);
    while (!events.empty()) {
        const Event ev = events.top();
        events.pop();
        busy[ev.stage] = false;
        if (ev.stage < 2) {
            ready[ev.stage + 1].push(ev.tile);
        } else {
            ++finished_writes;
            last_write_done = ev.time;
            if (!overlap) admit(ev.time);  // machine drained, next tile may enter
        }
        for (int s = 0; s < 3; ++s) try_start(s, ev.time);
        if (overlap) admit(ev.time);
    }
    if (finished_writes != std::uint64_t(n_tiles))
        throw std::logic_error("des_simulate: not all tiles completed");
    return last_write_done;
}

PipelineEstimate estimate(int n_tiles, const StageTimes& t) {
    PipelineEstimate e;
    e.n_tiles = n_tiles;
    e.times = t;
    e.serial_latency = latency_serial(n_tiles, t);
    e.pipelined_latency = latency_pipelined(n_tiles, t);
    e.speedup = double(e.serial_latency) / double(e.pipelined_latency);
    return e;
}

std::vector<PipelineEstimate> speedup_report(
    std::span<const std::pair<int, StageTimes>> plans) {
    if (plans.empty())
        throw std::invalid_argument("speedup_report: empty plan list");
    std::vector<PipelineEstimate> rows;
    rows.reserve(plans.size());
    for (const auto& [n, t] : plans) rows.push_back(estimate(n, t));
    return rows;
}

std::pair<int, StageTimes> stage_times_from_trace(const pipeline::StageTrace& trace) {
    if (trace.tiles.empty())
        throw std::invalid_argument("stage_times_from_trace: empty trace");
    auto median = [](std::vector<std::uint64_t> v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    std::vector<std::uint64_t> r, c, w;
    for (const auto& tile : trace.tiles) {
        r.push_back(tile.read_ticks);
        c.push_back(tile.compute_ticks);
        w.push_back(tile.write_ticks);
    }
    StageTimes t{median(r), median(c), median(w)};
    // a fast stage can legitimately measure zero ns; clamp so the model's
    // positivity precondition holds
    t.t_read = std::max<std::uint64_t>(t.t_read, 1);
    t.t_compute = std::max<std::uint64_t>(t.t_compute, 1);
    t.t_write = std::max<std::uint64_t>(t.t_write, 1);
    return {int(trace.tiles.size()), t};
}

}  // namespace llamaflow::costmodel
