#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "llamaflow/kernels.hpp"
#include "llamaflow/memman.hpp"
#include "llamaflow/model_io.hpp"
#include "llamaflow/pipeline.hpp"

namespace llamaflow::engine {

struct KVCache {
    int n_layers = 0;
    int seq_len = 0;
    int kv_dim = 0;
    std::vector<float> keys;    // n_layers x seq_len x kv_dim
    std::vector<float> values;  // same shape
    int filled_upto = 0;

    KVCache() = default;
    KVCache(int n_layers, int seq_len, int kv_dim);

    float* key_row(int layer, int t);
    float* value_row(int layer, int t);
    const float* key_row(int layer, int t) const;
    const float* value_row(int layer, int t) const;
};

struct SamplerConfig {
    float temperature = 1.0f;  // 0 = greedy argmax
    float top_p = 0.9f;        // in (0, 1]; 1 = plain temperature sampling
    std::uint64_t seed = 0;
};

// Ablation axes plus the pipeline knobs. Every on/off combination of the
// three flags is runnable; they select kernel paths, never change results
// beyond numerical noise.
struct EngineOptions {
    bool fuse = true;
    bool pipeline = true;
    bool reuse = true;
    int tile_rows = 32;
    int workers = 0;  // 0 = available hardware parallelism

    int resolved_workers() const;
};

struct TimingReport {
    double prefill_ms = 0.0;
    double decode_ms = 0.0;
    double total_ms = 0.0;
    int prompt_tokens = 0;
    int generated_tokens = 0;
    // absent when no decode steps ran
    std::optional<double> decode_tokens_per_s;
};

struct GenerationResult {
    std::vector<int> prompt_tokens;
    std::vector<int> generated;
    TimingReport timing;
    kernels::TrafficCounter traffic;
    std::size_t arena_peak_bytes = 0;
};

std::uint32_t random_u32(std::uint64_t& state);
float random_f32(std::uint64_t& state);

// llama2.c-compatible sampling: greedy argmax at temperature 0 (lowest
// index wins ties), otherwise temperature-scaled softmax followed by plain
// CDF or top-p nucleus sampling driven by the xorshift generator.
int sample(std::span<const float> logits, const SamplerConfig& cfg,
           std::uint64_t& rng_state);

// One sequence, one engine. The per-layer intermediates live in a reuse
// arena (or one slot per buffer with reuse off); the same arena serves
// every layer and every decode step.
class Engine {
public:
    Engine(const Model& model, EngineOptions opts);
    ~Engine();

    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    // Requires pos == cache().filled_upto. Returns logits over the
    // vocabulary; valid until the next forward call.
    std::span<const float> forward(int token, int pos);

    // Prefill the encoded prompt (BOS-only when empty), then sample `steps`
    // tokens autoregressively. Throughput is reported over the decode
    // phase only.
    GenerationResult generate(const Tokenizer& tokenizer, std::string_view prompt,
                              int steps, const SamplerConfig& sampler);

    void reset();

    const ModelConfig& config() const { return cfg_; }
    const EngineOptions& options() const { return opts_; }
    KVCache& cache() { return cache_; }
    const kernels::TrafficCounter& traffic() const;
    std::size_t arena_peak_bytes() const;

    // test hooks
    void set_collect_layer_traffic(bool enabled);
    std::span<const kernels::TrafficCounter> layer_traffic() const;
    void set_arena_guard(bool enabled);

private:
    struct State;

    void layer_unfused(int layer, int pos);
    void layer_fused(int layer, int pos);
    void run_matmul(std::span<float> out, std::span<const float> w,
                    std::span<const float> x, const pipeline::TilePlan* plan,
                    bool count_in, bool count_out);
    void attention_block(int layer, int pos, std::span<float> att_out);

    ModelConfig cfg_;
    const ModelWeights* weights_;
    EngineOptions opts_;
    KVCache cache_;
    std::unique_ptr<State> st_;
    std::unique_ptr<pipeline::PipelineExecutor> exec_;
    pipeline::TilePlan plan_dim_;
    pipeline::TilePlan plan_kv_;
    pipeline::TilePlan plan_hidden_;
    pipeline::TilePlan plan_vocab_;
};

}  // namespace llamaflow::engine
