#include "llamaflow/pipeline.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

#include <json.hpp>

namespace llamaflow::pipeline {

namespace {

std::uint64_t now_ticks() {
    return std::uint64_t(
        std::chrono::steady_clock::now().time_since_epoch().count());
}

// Synthetic stage latency. Sleeping (not spinning) models a stage waiting
// on a memory transfer, and lets overlap show up in wall time even when
// threads share one core.
void stage_delay(std::chrono::nanoseconds d) {
    if (d.count() <= 0) return;
    std::this_thread::sleep_for(d);
}

double dot(const float* a, const float* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += double(a[j]) * double(b[j]);
    return acc;
}

}  // namespace

TilePlan plan_tiles(int total_rows, int tile_rows, int worker_count) {
    if (total_rows < 1 || tile_rows < 1 || worker_count < 1)
        throw std::invalid_argument("plan_tiles: all arguments must be >= 1");
    TilePlan p;
    p.total_rows = total_rows;
    p.tile_rows = tile_rows;
    p.n_tiles = (total_rows + tile_rows - 1) / tile_rows;
    p.worker_count = worker_count;
    return p;
}

std::string StageTrace::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : tiles)
        arr.push_back({{"tile_index", t.tile_index},
                       {"worker", t.worker},
                       {"read_ticks", t.read_ticks},
                       {"compute_ticks", t.compute_ticks},
                       {"write_ticks", t.write_ticks},
                       {"start_tick", t.start_tick},
                       {"end_tick", t.end_tick}});
    return arr.dump(2);
}

struct MatmulJob {
    TilePlan plan;
    const float* w = nullptr;
    const float* x = nullptr;
    float* out = nullptr;
    std::size_t cols = 0;
    StageTrace* trace = nullptr;
};

struct ParallelForJob {
    int count = 0;
    const std::function<void(int, int)>* fn = nullptr;
};

struct PipelineExecutor::Impl {
    enum class JobKind { kNone, kMatmul, kParallelFor, kStop };

    // one lane = one compute thread plus its staging reader
    struct Lane {
        struct Slot {
            std::vector<float> weights;
            int tile = -1;
            std::uint64_t read_ticks = 0;
            bool full = false;
        };
        Slot slots[2];
        std::mutex m;
        std::condition_variable cv;
        std::thread compute;
        std::thread reader;
    };

    std::vector<std::unique_ptr<Lane>> lanes;

    std::mutex job_m;
    std::condition_variable job_cv;
    std::condition_variable done_cv;
    std::uint64_t job_generation = 0;
    JobKind job_kind = JobKind::kNone;
    MatmulJob matmul_job;
    ParallelForJob pfor_job;
    int pending = 0;  // compute threads yet to finish the current job
    StageDelays delays;

    explicit Impl(int worker_count) {
        if (worker_count < 1)
            throw std::invalid_argument("PipelineExecutor: worker_count must be >= 1");
        lanes.reserve(worker_count);
        for (int i = 0; i < worker_count; ++i)
            lanes.push_back(std::make_unique<Lane>());
        // a single lane runs inline on the caller; threads only help at >= 2
        if (worker_count < 2) return;
        for (int i = 0; i < worker_count; ++i) {
            lanes[i]->compute = std::thread([this, i] { compute_main(i); });
            lanes[i]->reader = std::thread([this, i] { reader_main(i); });
        }
    }

    ~Impl() {
        {
            std::lock_guard lock(job_m);
            job_kind = JobKind::kStop;
            ++job_generation;
        }
        job_cv.notify_all();
        for (auto& lane : lanes) {
            if (lane->compute.joinable()) lane->compute.join();
            if (lane->reader.joinable()) lane->reader.join();
        }
    }

    // Blocks until every participant reports done. Readers count too: the
    // job description must stay untouched until the last thread has left
    // its tile loop.
    void run_job(JobKind kind) {
        std::unique_lock lock(job_m);
        job_kind = kind;
        pending = 2 * int(lanes.size());
        ++job_generation;
        job_cv.notify_all();
        done_cv.wait(lock, [this] { return pending == 0; });
        job_kind = JobKind::kNone;
    }

    struct JobTicket {
        std::uint64_t generation;
        JobKind kind;
    };

    JobTicket wait_for_job(std::uint64_t& seen) {
        std::unique_lock lock(job_m);
        job_cv.wait(lock, [&] { return job_generation != seen; });
        seen = job_generation;
        return {seen, job_kind};
    }

    void finish_job_part() {
        std::lock_guard lock(job_m);
        if (--pending == 0) done_cv.notify_all();
    }

    void reader_main(int lane_idx) {
        Lane& lane = *lanes[lane_idx];
        std::uint64_t seen = 0;
        while (true) {
            const JobTicket job = wait_for_job(seen);
            if (job.kind == JobKind::kStop) return;
            if (job.kind != JobKind::kMatmul) {
                finish_job_part();
                continue;
            }

            const MatmulJob mj = matmul_job;  // snapshot; owner may rewrite it
            for (int t = lane_idx; t < mj.plan.n_tiles; t += mj.plan.worker_count) {
                Lane::Slot& slot = lane.slots[(t / mj.plan.worker_count) & 1];
                {
                    std::unique_lock lock(lane.m);
                    lane.cv.wait(lock, [&] { return !slot.full; });
                }
                const std::uint64_t t0 = now_ticks();
                const int row0 = mj.plan.tile_begin(t);
                const int rows = mj.plan.tile_end(t) - row0;
                slot.weights.resize(std::size_t(rows) * mj.cols);
                std::memcpy(slot.weights.data(), mj.w + std::size_t(row0) * mj.cols,
                            std::size_t(rows) * mj.cols * sizeof(float));
                stage_delay(delays.read);
                slot.tile = t;
                slot.read_ticks = now_ticks() - t0;
                {
                    std::lock_guard lock(lane.m);
                    slot.full = true;
                }
                lane.cv.notify_all();
            }
            finish_job_part();
        }
    }

    void run_tiles_inline(const MatmulJob& mj) {
        Lane& lane = *lanes[0];
        std::vector<float> out_staging;
        for (int t = 0; t < mj.plan.n_tiles; ++t) {
            Lane::Slot& slot = lane.slots[t & 1];
            const std::uint64_t read_start = now_ticks();
            const int row0 = mj.plan.tile_begin(t);
            const int rows = mj.plan.tile_end(t) - row0;
            slot.weights.resize(std::size_t(rows) * mj.cols);
            std::memcpy(slot.weights.data(), mj.w + std::size_t(row0) * mj.cols,
                        std::size_t(rows) * mj.cols * sizeof(float));
            stage_delay(delays.read);

            const std::uint64_t compute_start = now_ticks();
            out_staging.resize(std::size_t(rows));
            for (int r = 0; r < rows; ++r)
                out_staging[std::size_t(r)] = float(
                    dot(slot.weights.data() + std::size_t(r) * mj.cols, mj.x, mj.cols));
            stage_delay(delays.compute);

            const std::uint64_t write_start = now_ticks();
            std::memcpy(mj.out + row0, out_staging.data(),
                        std::size_t(rows) * sizeof(float));
            stage_delay(delays.write);
            const std::uint64_t end = now_ticks();

            if (mj.trace) {
                TileRecord& rec = mj.trace->tiles[std::size_t(t)];
                rec.tile_index = t;
                rec.worker = 0;
                rec.read_ticks = compute_start - read_start;
                rec.compute_ticks = write_start - compute_start;
                rec.write_ticks = end - write_start;
                rec.start_tick = compute_start;
                rec.end_tick = end;
            }
        }
    }

    void compute_main(int lane_idx) {
        Lane& lane = *lanes[lane_idx];
        std::uint64_t seen = 0;
        std::vector<float> out_staging;
        while (true) {
            const JobTicket job = wait_for_job(seen);
            if (job.kind == JobKind::kStop) return;

            if (job.kind == JobKind::kParallelFor) {
                const int count = pfor_job.count;
                const int workers = int(lanes.size());
                const int chunk = (count + workers - 1) / workers;
                const int begin = lane_idx * chunk;
                const int end = std::min(count, begin + chunk);
                if (begin < end) (*pfor_job.fn)(begin, end);
                finish_job_part();
                continue;
            }

            if (job.kind != JobKind::kMatmul) {
                finish_job_part();
                continue;
            }

            const MatmulJob mj = matmul_job;  // snapshot; owner may rewrite it
            for (int t = lane_idx; t < mj.plan.n_tiles; t += mj.plan.worker_count) {
                Lane::Slot& slot = lane.slots[(t / mj.plan.worker_count) & 1];
                {
                    std::unique_lock lock(lane.m);
                    lane.cv.wait(lock, [&] { return slot.full; });
                }
                const int row0 = mj.plan.tile_begin(t);
                const int rows = mj.plan.tile_end(t) - row0;

                const std::uint64_t compute_start = now_ticks();
                out_staging.resize(std::size_t(rows));
                for (int r = 0; r < rows; ++r)
                    out_staging[std::size_t(r)] = float(
                        dot(slot.weights.data() + std::size_t(r) * mj.cols, mj.x, mj.cols));
                stage_delay(delays.compute);
                const std::uint64_t write_start = now_ticks();
                std::memcpy(mj.out + row0, out_staging.data(), std::size_t(rows) * sizeof(float));
                stage_delay(delays.write);
                const std::uint64_t end = now_ticks();

                if (mj.trace) {
                    TileRecord& rec = mj.trace->tiles[std::size_t(t)];
                    rec.tile_index = t;
                    rec.worker = lane_idx;
                    rec.read_ticks = slot.read_ticks;
                    rec.compute_ticks = write_start - compute_start;
                    rec.write_ticks = end - write_start;
                    rec.start_tick = compute_start;
                    rec.end_tick = end;
                }
                {
                    std::lock_guard lock(lane.m);
                    slot.full = false;
                }
                lane.cv.notify_all();
            }
            finish_job_part();
        }
    }
};

PipelineExecutor::PipelineExecutor(int worker_count)
    : impl_(std::make_unique<Impl>(worker_count)) {}

PipelineExecutor::~PipelineExecutor() = default;

int PipelineExecutor::worker_count() const { return int(impl_->lanes.size()); }

void PipelineExecutor::execute_tiled_matmul(const TilePlan& plan,
                                            std::span<const float> w,
                                            std::span<const float> x,
                                            std::span<float> out,
                                            StageTrace* trace) {
    if (plan.worker_count != worker_count())
        throw std::invalid_argument("execute_tiled_matmul: plan worker_count differs from pool");
    if (out.size() != std::size_t(plan.total_rows))
        throw std::invalid_argument("execute_tiled_matmul: out rows mismatch");
    if (x.empty() || w.size() != out.size() * x.size())
        throw std::invalid_argument("execute_tiled_matmul: shape mismatch");
    const float* xb = x.data();
    const float* xe = xb + x.size();
    if (out.data() < xe && xb < out.data() + out.size())
        throw std::invalid_argument("execute_tiled_matmul: out aliases x");

    if (trace) {
        trace->tiles.clear();
        trace->tiles.resize(std::size_t(plan.n_tiles));
    }

    // One lane cannot overlap anything, so run the staged loop inline and
    // skip the reader handoffs entirely. Same tiles, same staging buffers,
    // same arithmetic; only the concurrency is gone.
    if (worker_count() == 1) {
        const MatmulJob mj{plan, w.data(), x.data(), out.data(), x.size(), trace};
        impl_->run_tiles_inline(mj);
        return;
    }

    impl_->matmul_job = MatmulJob{plan, w.data(), x.data(), out.data(), x.size(), trace};
    impl_->run_job(Impl::JobKind::kMatmul);
}

void PipelineExecutor::parallel_for(int count,
                                    const std::function<void(int, int)>& fn) {
    if (count <= 0) return;
    if (worker_count() == 1) {
        fn(0, count);
        return;
    }
    impl_->pfor_job = ParallelForJob{count, &fn};
    impl_->run_job(Impl::JobKind::kParallelFor);
}

void PipelineExecutor::set_stage_delays(const StageDelays& delays) {
    impl_->delays = delays;
}

}  // namespace llamaflow::pipeline
