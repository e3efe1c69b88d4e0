#include "llamaflow/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace llamaflow::engine {

KVCache::KVCache(int n_layers, int seq_len, int kv_dim)
    : n_layers(n_layers), seq_len(seq_len), kv_dim(kv_dim),
      keys(std::size_t(n_layers) * seq_len * kv_dim, 0.0f),
      values(std::size_t(n_layers) * seq_len * kv_dim, 0.0f) {}

float* KVCache::key_row(int layer, int t) {
    return keys.data() + (std::size_t(layer) * seq_len + t) * kv_dim;
}
float* KVCache::value_row(int layer, int t) {
    return values.data() + (std::size_t(layer) * seq_len + t) * kv_dim;
}
const float* KVCache::key_row(int layer, int t) const {
    return keys.data() + (std::size_t(layer) * seq_len + t) * kv_dim;
}
const float* KVCache::value_row(int layer, int t) const {
    return values.data() + (std::size_t(layer) * seq_len + t) * kv_dim;
}

int EngineOptions::resolved_workers() const {
    if (workers > 0) return workers;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? int(hw) : 1;
}

std::uint32_t random_u32(std::uint64_t& state) {
    // xorshift64*
    state ^= state >> 12;
    state ^= state << 25;
    state ^= state >> 27;
    return std::uint32_t((state * 0x2545F4914F6CDD1DULL) >> 32);
}

float random_f32(std::uint64_t& state) {
    return float(random_u32(state) >> 8) / 16777216.0f;
}

int sample(std::span<const float> logits, const SamplerConfig& cfg,
           std::uint64_t& rng_state) {
    const int n = int(logits.size());
    if (n == 0) throw std::invalid_argument("sample: empty logits");
    if (cfg.temperature < 0.0f)
        throw std::invalid_argument("sample: negative temperature");

    if (cfg.temperature == 0.0f) {
        int best = 0;
        for (int i = 1; i < n; ++i)
            if (logits[i] > logits[best]) best = i;  // lowest index wins ties
        return best;
    }

    std::vector<float> probs(logits.begin(), logits.end());
    for (float& p : probs) p /= cfg.temperature;
    kernels::softmax_inplace(probs);
    const float coin = random_f32(rng_state);

    if (cfg.top_p <= 0.0f || cfg.top_p >= 1.0f) {
        // plain sampling from the full distribution
        float cdf = 0.0f;
        for (int i = 0; i < n; ++i) {
            cdf += probs[i];
            if (coin < cdf) return i;
        }
        return n - 1;
    }

    if (n == 1) return 0;

    // nucleus sampling: smallest score-descending prefix reaching top_p.
    // values below (1-top_p)/(n-1) can never be part of that prefix
    const float cutoff = (1.0f - cfg.top_p) / float(n - 1);
    std::vector<int> candidates;
    candidates.reserve(64);
    for (int i = 0; i < n; ++i)
        if (probs[i] >= cutoff) candidates.push_back(i);
    if (candidates.empty()) {
        int best = 0;
        for (int i = 1; i < n; ++i)
            if (probs[i] > probs[best]) best = i;
        candidates.push_back(best);
    }
    std::sort(candidates.begin(), candidates.end(), [&](int a, int b) {
        if (probs[a] != probs[b]) return probs[a] > probs[b];
        return a < b;
    });

    float cumulative = 0.0f;
    std::size_t last = candidates.size() - 1;
    for (std::size_t r = 0; r < candidates.size(); ++r) {
        cumulative += probs[candidates[r]];
        if (cumulative >= cfg.top_p) {
            last = r;
            break;
        }
    }

    const float target = coin * cumulative;  // renormalized draw
    float cdf = 0.0f;
    for (std::size_t r = 0; r <= last; ++r) {
        cdf += probs[candidates[r]];
        if (target < cdf) return candidates[r];
    }
    return candidates[last];
}

// Arena views plus the persistent per-sequence vectors. Spans point into
// the arena storage, so the whole state lives behind a stable pointer.
struct Engine::State {
    std::vector<memman::BufferSpec> graph;
    memman::SlotAssignment assignment;
    memman::Arena arena;

    std::vector<float> x;             // residual stream
    std::vector<float> logits;
    std::vector<float> norm_scratch;  // fused-path normalized vector

    std::span<float> norm, q, k, v, scores, att_out, proj, h1, h3, gated;

    kernels::TrafficCounter traffic;
    bool collect_layer_traffic = false;
    std::vector<kernels::TrafficCounter> layer_traffic;

    State(const ModelConfig& cfg, bool fused, bool reuse)
        : graph(memman::layer_buffer_graph(cfg, fused)),
          assignment(reuse ? memman::assign_slots(graph)
                           : distinct_slots(graph)),
          arena(graph, assignment),
          x(cfg.dim, 0.0f),
          logits(cfg.vocab_size, 0.0f),
          norm_scratch(cfg.dim, 0.0f) {
        q = arena.span("q");
        k = arena.span("k");
        v = arena.span("v");
        att_out = arena.span("att_out");
        proj = arena.span("proj");
        h1 = arena.span("h1");
        h3 = arena.span("h3");
        if (!fused) {
            norm = arena.span("norm");
            scores = arena.span("scores");
            gated = arena.span("gated");
        }
        layer_traffic.resize(cfg.n_layers);
    }

    // one-buffer-per-tensor baseline (reuse ablated off)
    static memman::SlotAssignment distinct_slots(
        std::span<const memman::BufferSpec> specs) {
        memman::SlotAssignment a;
        std::size_t total = 0;
        for (std::size_t i = 0; i < specs.size(); ++i) {
            a.slot_of[specs[i].id] = int(i);
            a.slot_sizes.push_back(specs[i].size);
            total += specs[i].size;
        }
        a.peak_bytes = total * sizeof(float);
        return a;
    }
};

Engine::Engine(const Model& model, EngineOptions opts)
    : cfg_(model.config), weights_(&model.weights), opts_(opts) {
    cfg_.validate();
    opts_.workers = opts_.resolved_workers();
    if (opts_.tile_rows < 1)
        throw std::invalid_argument("engine: tile_rows must be >= 1");
    cache_ = KVCache(cfg_.n_layers, cfg_.seq_len, cfg_.kv_dim());
    st_ = std::make_unique<State>(cfg_, opts_.fuse, opts_.reuse);
    if (opts_.pipeline) {
        exec_ = std::make_unique<pipeline::PipelineExecutor>(opts_.workers);
        plan_dim_ = pipeline::plan_tiles(cfg_.dim, opts_.tile_rows, opts_.workers);
        plan_kv_ = pipeline::plan_tiles(cfg_.kv_dim(), opts_.tile_rows, opts_.workers);
        plan_hidden_ = pipeline::plan_tiles(cfg_.hidden_dim, opts_.tile_rows, opts_.workers);
        plan_vocab_ = pipeline::plan_tiles(cfg_.vocab_size, opts_.tile_rows, opts_.workers);
    }
}

Engine::~Engine() = default;

const kernels::TrafficCounter& Engine::traffic() const { return st_->traffic; }

std::size_t Engine::arena_peak_bytes() const { return st_->arena.peak_bytes(); }

void Engine::set_collect_layer_traffic(bool enabled) {
    st_->collect_layer_traffic = enabled;
}

std::span<const kernels::TrafficCounter> Engine::layer_traffic() const {
    return st_->layer_traffic;
}

void Engine::set_arena_guard(bool enabled) { st_->arena.set_guard(enabled); }

void Engine::reset() {
    cache_.filled_upto = 0;
    st_->traffic.reset();
}

void Engine::run_matmul(std::span<float> out, std::span<const float> w,
                        std::span<const float> x, const pipeline::TilePlan* plan,
                        bool count_in, bool count_out) {
    if (opts_.pipeline) {
        exec_->execute_tiled_matmul(*plan, w, x, out);
    } else {
        kernels::matmul(out, w, x, nullptr);
    }
    auto& tc = st_->traffic;
    if (count_in) tc.intermediate_reads += x.size();
    if (count_out) tc.intermediate_writes += out.size();
    tc.weight_reads += w.size();
}

void Engine::attention_block(int layer, int pos, std::span<float> att_out) {
    auto& s = *st_;
    const int hs = cfg_.head_size();
    const int kv_mul = cfg_.n_heads / cfg_.n_kv_heads;
    const std::size_t stride = std::size_t(cfg_.kv_dim());
    const float* key_base = cache_.key_row(layer, 0);
    const float* val_base = cache_.value_row(layer, 0);

    auto run_head = [&](int h) {
        const std::size_t head_off = std::size_t(h / kv_mul) * hs;
        std::span<const float> qh = s.q.subspan(std::size_t(h) * hs, hs);
        std::span<float> oh = att_out.subspan(std::size_t(h) * hs, hs);
        if (opts_.fuse) {
            kernels::fused_attention_online(oh, qh, key_base + head_off,
                                            val_base + head_off, stride, pos,
                                            nullptr);
        } else {
            std::span<float> sc =
                s.scores.subspan(std::size_t(h) * cfg_.seq_len, cfg_.seq_len);
            kernels::attention_head_reference(oh, qh, key_base + head_off,
                                              val_base + head_off, stride, pos,
                                              sc, nullptr);
        }
    };

    if (opts_.pipeline) {
        exec_->parallel_for(cfg_.n_heads, [&](int begin, int end) {
            for (int h = begin; h < end; ++h) run_head(h);
        });
    } else {
        for (int h = 0; h < cfg_.n_heads; ++h) run_head(h);
    }

    auto& tc = s.traffic;
    const std::uint64_t score_elems =
        std::uint64_t(cfg_.n_heads) * (std::uint64_t(pos) + 1);
    tc.intermediate_reads += std::uint64_t(cfg_.dim);
    tc.intermediate_writes += std::uint64_t(cfg_.dim);
    if (!opts_.fuse) {
        tc.intermediate_reads += score_elems;
        tc.intermediate_writes += score_elems;
    }
}

void Engine::layer_unfused(int layer, int pos) {
    auto& s = *st_;
    auto& w = *weights_;
    auto& tc = s.traffic;
    const std::size_t kv = std::size_t(cfg_.kv_dim());

    s.arena.note_write("norm");
    kernels::rmsnorm(s.norm, s.x, w.rms_att_weight(layer), &tc);

    s.arena.note_read("norm");
    s.arena.note_write("q");
    run_matmul(s.q, w.wq(layer), s.norm, &plan_dim_, true, true);
    s.arena.note_write("k");
    run_matmul(s.k, w.wk(layer), s.norm, &plan_kv_, true, true);
    s.arena.note_write("v");
    run_matmul(s.v, w.wv(layer), s.norm, &plan_kv_, true, true);

    s.arena.note_read("q");
    s.arena.note_read("k");
    kernels::rope_apply(s.q, s.k, pos, cfg_.head_size());

    s.arena.note_read("v");
    std::memcpy(cache_.key_row(layer, pos), s.k.data(), kv * sizeof(float));
    std::memcpy(cache_.value_row(layer, pos), s.v.data(), kv * sizeof(float));
    tc.intermediate_reads += 2 * kv;

    s.arena.note_write("scores");
    s.arena.note_read("scores");
    s.arena.note_write("att_out");
    attention_block(layer, pos, s.att_out);

    s.arena.note_read("att_out");
    s.arena.note_write("proj");
    run_matmul(s.proj, w.wo(layer), s.att_out, &plan_dim_, true, true);

    s.arena.note_read("proj");
    kernels::residual_add_inplace(s.x, s.proj, &tc);

    s.arena.note_write("norm");
    kernels::rmsnorm(s.norm, s.x, w.rms_ffn_weight(layer), &tc);

    s.arena.note_read("norm");
    s.arena.note_write("h1");
    run_matmul(s.h1, w.w1(layer), s.norm, &plan_hidden_, true, true);
    s.arena.note_write("h3");
    run_matmul(s.h3, w.w3(layer), s.norm, &plan_hidden_, true, true);

    s.arena.note_read("h1");
    s.arena.note_read("h3");
    s.arena.note_write("gated");
    kernels::swiglu(s.gated, s.h1, s.h3, &tc);

    s.arena.note_read("gated");
    s.arena.note_write("proj");
    run_matmul(s.proj, w.w2(layer), s.gated, &plan_dim_, true, true);

    s.arena.note_read("proj");
    kernels::residual_add_inplace(s.x, s.proj, &tc);
}

void Engine::layer_fused(int layer, int pos) {
    auto& s = *st_;
    auto& w = *weights_;
    auto& tc = s.traffic;
    const std::size_t kv = std::size_t(cfg_.kv_dim());

    // fused rmsnorm + QKV projections; the normalized vector stays in
    // scratch and is never an arena buffer
    s.arena.note_write("q");
    s.arena.note_write("k");
    s.arena.note_write("v");
    if (opts_.pipeline) {
        kernels::rmsnorm(s.norm_scratch, s.x, w.rms_att_weight(layer), nullptr);
        tc.weight_reads += s.norm_scratch.size();
        run_matmul(s.q, w.wq(layer), s.norm_scratch, &plan_dim_, false, true);
        run_matmul(s.k, w.wk(layer), s.norm_scratch, &plan_kv_, false, true);
        run_matmul(s.v, w.wv(layer), s.norm_scratch, &plan_kv_, false, true);
    } else {
        const std::span<const float> ws[3] = {w.wq(layer), w.wk(layer), w.wv(layer)};
        const std::span<float> outs[3] = {s.q, s.k, s.v};
        kernels::fused_rmsnorm_matmuls(s.x, w.rms_att_weight(layer), ws, outs,
                                       s.norm_scratch, &tc);
    }

    s.arena.note_read("q");
    s.arena.note_read("k");
    kernels::rope_apply(s.q, s.k, pos, cfg_.head_size());

    s.arena.note_read("v");
    std::memcpy(cache_.key_row(layer, pos), s.k.data(), kv * sizeof(float));
    std::memcpy(cache_.value_row(layer, pos), s.v.data(), kv * sizeof(float));
    tc.intermediate_reads += 2 * kv;

    s.arena.note_write("att_out");
    attention_block(layer, pos, s.att_out);

    s.arena.note_read("att_out");
    s.arena.note_write("proj");
    run_matmul(s.proj, w.wo(layer), s.att_out, &plan_dim_, true, true);

    s.arena.note_read("proj");
    kernels::residual_add_inplace(s.x, s.proj, &tc);

    // fused FFN: interleaved w1/w3 rows with the gate formed in registers;
    // h1 ends up holding the gated vector
    s.arena.note_write("h1");
    s.arena.note_write("h3");
    s.arena.note_read("h1");
    s.arena.note_write("proj");
    if (opts_.pipeline) {
        kernels::rmsnorm(s.norm_scratch, s.x, w.rms_ffn_weight(layer), nullptr);
        tc.weight_reads += s.norm_scratch.size();
        const std::size_t n = std::size_t(cfg_.dim);
        const float* w1p = w.w1(layer).data();
        const float* w3p = w.w3(layer).data();
        const float* nx = s.norm_scratch.data();
        float* h1p = s.h1.data();
        float* h3p = s.h3.data();
        exec_->parallel_for(cfg_.hidden_dim, [&](int begin, int end) {
            for (int i = begin; i < end; ++i) {
                double a = 0.0, b = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    a += double(w1p[std::size_t(i) * n + j]) * double(nx[j]);
                    b += double(w3p[std::size_t(i) * n + j]) * double(nx[j]);
                }
                const float af = float(a), bf = float(b);
                h3p[i] = bf;
                h1p[i] = (af / (1.0f + std::exp(-af))) * bf;
            }
        });
        tc.intermediate_writes += 2 * std::uint64_t(cfg_.hidden_dim);
        tc.weight_reads += 2 * std::uint64_t(cfg_.hidden_dim) * cfg_.dim;
        run_matmul(s.proj, w.w2(layer), s.h1, &plan_dim_, true, true);
    } else {
        kernels::fused_ffn(s.proj, s.x, w.rms_ffn_weight(layer), w.w1(layer),
                           w.w2(layer), w.w3(layer), s.h1, s.h3,
                           s.norm_scratch, &tc);
    }

    s.arena.note_read("proj");
    kernels::residual_add_inplace(s.x, s.proj, &tc);
}

std::span<const float> Engine::forward(int token, int pos) {
    auto& s = *st_;
    if (token < 0 || token >= cfg_.vocab_size)
        throw std::invalid_argument("forward: token id out of range");
    if (pos < 0 || pos >= cfg_.seq_len)
        throw std::invalid_argument("forward: position " + std::to_string(pos) +
                                    " outside seq_len " + std::to_string(cfg_.seq_len));
    if (pos != cache_.filled_upto)
        throw std::invalid_argument("forward: position " + std::to_string(pos) +
                                    " does not continue the cache (filled_upto=" +
                                    std::to_string(cache_.filled_upto) + ")");

    auto emb = weights_->token_embedding_row(token);
    std::copy(emb.begin(), emb.end(), s.x.begin());
    s.traffic.weight_reads += emb.size();

    for (int l = 0; l < cfg_.n_layers; ++l) {
        const kernels::TrafficCounter before = s.traffic;
        if (opts_.fuse)
            layer_fused(l, pos);
        else
            layer_unfused(l, pos);
        if (s.collect_layer_traffic) {
            kernels::TrafficCounter d;
            d.intermediate_reads = s.traffic.intermediate_reads - before.intermediate_reads;
            d.intermediate_writes = s.traffic.intermediate_writes - before.intermediate_writes;
            d.weight_reads = s.traffic.weight_reads - before.weight_reads;
            s.layer_traffic[l] = d;
        }
        for (float f : s.x)
            if (!std::isfinite(f))
                throw std::runtime_error("forward: non-finite activation after layer " +
                                         std::to_string(l));
    }

    kernels::rmsnorm(s.x, s.x, weights_->rms_final_weight(), nullptr);
    s.traffic.weight_reads += std::uint64_t(cfg_.dim);

    run_matmul(s.logits, weights_->classifier(), s.x, &plan_vocab_, false, false);

    for (float f : s.logits)
        if (!std::isfinite(f))
            throw std::runtime_error("forward: non-finite logit after classifier");

    cache_.filled_upto = pos + 1;
    return s.logits;
}

GenerationResult Engine::generate(const Tokenizer& tokenizer,
                                  std::string_view prompt, int steps,
                                  const SamplerConfig& sampler) {
    if (steps < 0) throw std::invalid_argument("generate: negative step count");
    GenerationResult result;
    result.prompt_tokens = encode(tokenizer, prompt, /*add_bos=*/true, /*add_eos=*/false);
    const int m = int(result.prompt_tokens.size());
    if (m + steps > cfg_.seq_len)
        throw std::invalid_argument(
            "generate: prompt (" + std::to_string(m) + " tokens) + steps (" +
            std::to_string(steps) + ") exceeds seq_len " + std::to_string(cfg_.seq_len));

    reset();
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();

    std::span<const float> logits;
    for (int i = 0; i < m; ++i) logits = forward(result.prompt_tokens[i], i);
    const auto t1 = clock::now();

    std::uint64_t rng = sampler.seed;
    for (int sidx = 0; sidx < steps; ++sidx) {
        const int next = sample(logits, sampler, rng);
        result.generated.push_back(next);
        if (sidx + 1 < steps) logits = forward(next, m + sidx);
    }
    const auto t2 = clock::now();

    auto ms = [](auto a, auto b) {
        return std::chrono::duration<double, std::milli>(b - a).count();
    };
    result.timing.prefill_ms = ms(t0, t1);
    result.timing.decode_ms = ms(t1, t2);
    result.timing.total_ms = ms(t0, t2);
    result.timing.prompt_tokens = m;
    result.timing.generated_tokens = steps;
    if (steps > 0)
        result.timing.decode_tokens_per_s =
            double(steps) / (result.timing.decode_ms / 1000.0);
    result.traffic = st_->traffic;
    result.arena_peak_bytes = st_->arena.peak_bytes();
    return result;
}

}  // namespace llamaflow::engine
