#pragma once

#include <cstdint>
#include <span>

namespace llamaflow::kernels {

inline constexpr float kRmsNormEps = 1e-5f;
inline constexpr float kRopeBase = 10000.0f;

// Element-count traffic proxy: how many intermediate-tensor and weight
// elements an operator moves. Intermediate traffic covers reads/writes of
// scratch tensors between operators; the persistent activation stream,
// logits and KV cache are not intermediates. In-place refinement passes
// (rope, softmax-in-place, residual target) move nothing.
struct TrafficCounter {
    std::uint64_t intermediate_reads = 0;
    std::uint64_t intermediate_writes = 0;
    std::uint64_t weight_reads = 0;

    std::uint64_t intermediate_total() const {
        return intermediate_reads + intermediate_writes;
    }
    void reset() { *this = TrafficCounter{}; }
};

// out_i = w_i * x_i / sqrt(mean(x^2) + eps)
void rmsnorm(std::span<float> out, std::span<const float> x,
             std::span<const float> weight, TrafficCounter* tc = nullptr);

// out = W x with W row-major (out.size() rows, x.size() cols). Dot products
// accumulate in double precision over ascending j; this summation order is
// the contract every execution path preserves.
void matmul(std::span<float> out, std::span<const float> w,
            std::span<const float> x, TrafficCounter* tc = nullptr);

// matmul with residual epilogue: out_i += sum_j W_ij x_j
void matmul_add(std::span<float> out, std::span<const float> w,
                std::span<const float> x, TrafficCounter* tc = nullptr);

// numerically stable (max-subtracted); entries end non-negative, sum 1
void softmax_inplace(std::span<float> x);

// rotates (x_{2i}, x_{2i+1}) pairs of q (and the k prefix) by
// pos * base^(-head_pair_index*2/head_size); throws on odd head_size
void rope_apply(std::span<float> q, std::span<float> k, int pos, int head_size);

// out_i = silu(h1_i) * h3_i
void swiglu(std::span<float> out, std::span<const float> h1,
            std::span<const float> h3, TrafficCounter* tc = nullptr);

// x_i += delta_i
void residual_add_inplace(std::span<float> x, std::span<const float> delta,
                          TrafficCounter* tc = nullptr);

// One attention head over cache rows 0..pos: materializes the score vector
// into `scores` (counted as intermediate traffic), softmaxes it, then mixes
// values. keys/values point at this head's slice of row 0; consecutive rows
// are `row_stride` floats apart.
void attention_head_reference(std::span<float> out, std::span<const float> q,
                              const float* keys, const float* values,
                              std::size_t row_stride, int pos,
                              std::span<float> scores,
                              TrafficCounter* tc = nullptr);

// Same contract as the reference head, computed in a single pass with a
// running maximum / normalizer / weighted accumulator. No score vector
// exists, so the only counted traffic is the q read and the output write.
void fused_attention_online(std::span<float> out, std::span<const float> q,
                            const float* keys, const float* values,
                            std::size_t row_stride, int pos,
                            TrafficCounter* tc = nullptr);

// Normalizes x once into `norm_scratch` (not an arena buffer, not counted)
// and streams it through every W in `ws`, writing `outs[k] = ws[k] * norm`.
void fused_rmsnorm_matmuls(std::span<const float> x,
                           std::span<const float> norm_weight,
                           std::span<const std::span<const float>> ws,
                           std::span<const std::span<float>> outs,
                           std::span<float> norm_scratch,
                           TrafficCounter* tc = nullptr);

// Full FFN block: rmsnorm into scratch, then one interleaved pass over the
// w1/w3 rows that stores silu(w1_i . n) * (w3_i . n) straight into h1 (h3
// keeps the raw w3 products), then out = w2 * h1. Equivalent to the five-op
// composition; skips the normalized and gated arena buffers.
void fused_ffn(std::span<float> out, std::span<const float> x,
               std::span<const float> norm_weight, std::span<const float> w1,
               std::span<const float> w2, std::span<const float> w3,
               std::span<float> h1, std::span<float> h3,
               std::span<float> norm_scratch, TrafficCounter* tc = nullptr);

}  // namespace llamaflow::kernels
