#include "llamaflow/kernels.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace llamaflow::kernels {

namespace {

void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

double dot(const float* a, const float* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += double(a[j]) * double(b[j]);
    return acc;
}

inline float silu(float z) { return z / (1.0f + std::exp(-z)); }

}  // namespace

void rmsnorm(std::span<float> out, std::span<const float> x,
             std::span<const float> weight, TrafficCounter* tc) {
    const std::size_t n = x.size();
    require(n >= 1, "rmsnorm: empty input");
    require(out.size() == n && weight.size() == n, "rmsnorm: length mismatch");
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += double(x[i]) * double(x[i]);
    const float scale = float(1.0 / std::sqrt(ss / double(n) + double(kRmsNormEps)));
    for (std::size_t i = 0; i < n; ++i) out[i] = weight[i] * (scale * x[i]);
    if (tc) {
        tc->intermediate_writes += n;
        tc->weight_reads += n;
    }
}

void matmul(std::span<float> out, std::span<const float> w,
            std::span<const float> x, TrafficCounter* tc) {
    const std::size_t n = x.size(), d = out.size();
    require(n >= 1 && d >= 1, "matmul: empty operand");
    require(w.size() == n * d, "matmul: shape mismatch");
    for (std::size_t i = 0; i < d; ++i)
        out[i] = float(dot(w.data() + i * n, x.data(), n));
    if (tc) {
        tc->intermediate_reads += n;
        tc->intermediate_writes += d;
        tc->weight_reads += n * d;
    }
}

void matmul_add(std::span<float> out, std::span<const float> w,
                std::span<const float> x, TrafficCounter* tc) {
    const std::size_t n = x.size(), d = out.size();
    require(n >= 1 && d >= 1, "matmul_add: empty operand");
    require(w.size() == n * d, "matmul_add: shape mismatch");
    for (std::size_t i = 0; i < d; ++i)
        out[i] += float(dot(w.data() + i * n, x.data(), n));
    if (tc) {
        tc->intermediate_reads += n;
        tc->weight_reads += n * d;
    }
}

void softmax_inplace(std::span<float> x) {
    require(!x.empty(), "softmax: empty input");
    float max_val = x[0];
    for (float v : x)
        if (v > max_val) max_val = v;
    double sum = 0.0;
    for (float& v : x) {
        v = std::exp(v - max_val);
        sum += v;
    }
    for (float& v : x) v = float(v / sum);
}

void rope_apply(std::span<float> q, std::span<float> k, int pos, int head_size) {
    require(head_size >= 2 && head_size % 2 == 0, "rope: head_size must be even");
    require(pos >= 0, "rope: negative position");
    require(q.size() % head_size == 0 && k.size() % head_size == 0,
            "rope: vector length not a multiple of head_size");
    for (std::size_t i = 0; i + 1 < q.size(); i += 2) {
        const int pair_offset = int(i) % head_size;
        const float freq = 1.0f / std::pow(kRopeBase, float(pair_offset) / float(head_size));
        const float angle = float(pos) * freq;
        const float fcr = std::cos(angle);
        const float fci = std::sin(angle);
        const float q0 = q[i], q1 = q[i + 1];
        q[i] = q0 * fcr - q1 * fci;
        q[i + 1] = q0 * fci + q1 * fcr;
        if (i + 1 < k.size()) {
            const float k0 = k[i], k1 = k[i + 1];
            k[i] = k0 * fcr - k1 * fci;
            k[i + 1] = k0 * fci + k1 * fcr;
        }
    }
}

void swiglu(std::span<float> out, std::span<const float> h1,
            std::span<const float> h3, TrafficCounter* tc) {
    const std::size_t n = h1.size();
    require(h3.size() == n && out.size() == n, "swiglu: length mismatch");
    for (std::size_t i = 0; i < n; ++i) out[i] = silu(h1[i]) * h3[i];
    if (tc) {
        tc->intermediate_reads += 2 * n;
        tc->intermediate_writes += n;
    }
}

void residual_add_inplace(std::span<float> x, std::span<const float> delta,
                          TrafficCounter* tc) {
    require(x.size() == delta.size(), "residual_add: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += delta[i];
    if (tc) tc->intermediate_reads += delta.size();
}

void attention_head_reference(std::span<float> out, std::span<const float> q,
                              const float* keys, const float* values,
                              std::size_t row_stride, int pos,
                              std::span<float> scores, TrafficCounter* tc) {
    const std::size_t hs = q.size();
    require(out.size() == hs, "attention: out/q length mismatch");
    require(pos >= 0, "attention: negative position");
    require(scores.size() >= std::size_t(pos) + 1, "attention: score buffer too small");
    const double inv_sqrt = 1.0 / std::sqrt(double(hs));
    for (int t = 0; t <= pos; ++t)
        scores[t] = float(dot(q.data(), keys + std::size_t(t) * row_stride, hs) * inv_sqrt);
    softmax_inplace(scores.subspan(0, pos + 1));
    for (std::size_t i = 0; i < hs; ++i) {
        double acc = 0.0;
        for (int t = 0; t <= pos; ++t)
            acc += double(scores[t]) * double(values[std::size_t(t) * row_stride + i]);
        out[i] = float(acc);
    }
    if (tc) {
        tc->intermediate_reads += hs + std::size_t(pos) + 1;
        tc->intermediate_writes += std::size_t(pos) + 1 + hs;
    }
}

void fused_attention_online(std::span<float> out, std::span<const float> q,
                            const float* keys, const float* values,
                            std::size_t row_stride, int pos,
                            TrafficCounter* tc) {
    const std::size_t hs = q.size();
    require(out.size() == hs, "attention: out/q length mismatch");
    require(pos >= 0, "attention: negative position");
    const double inv_sqrt = 1.0 / std::sqrt(double(hs));

    double running_max = -HUGE_VAL;
    double normalizer = 0.0;
    std::vector<double> acc(hs, 0.0);
    for (int t = 0; t <= pos; ++t) {
        const double s = dot(q.data(), keys + std::size_t(t) * row_stride, hs) * inv_sqrt;
        const float sf = float(s);  // score quantized as the reference stores it
        if (double(sf) > running_max) {
            const double correction = std::exp(running_max - double(sf));
            normalizer *= correction;
            for (double& a : acc) a *= correction;
            running_max = double(sf);
        }
        const double p = std::exp(double(sf) - running_max);
        normalizer += p;
        const float* vrow = values + std::size_t(t) * row_stride;
        for (std::size_t i = 0; i < hs; ++i) acc[i] += p * double(vrow[i]);
    }
    for (std::size_t i = 0; i < hs; ++i) out[i] = float(acc[i] / normalizer);
    if (tc) {
        tc->intermediate_reads += hs;
        tc->intermediate_writes += hs;
    }
}

void fused_rmsnorm_matmuls(std::span<const float> x,
                           std::span<const float> norm_weight,
                           std::span<const std::span<const float>> ws,
                           std::span<const std::span<float>> outs,
                           std::span<float> norm_scratch, TrafficCounter* tc) {
    const std::size_t n = x.size();
    require(ws.size() == outs.size(), "fused_rmsnorm_matmuls: ws/outs size mismatch");
    require(norm_scratch.size() == n, "fused_rmsnorm_matmuls: scratch length mismatch");
    rmsnorm(norm_scratch, x, norm_weight, nullptr);
    std::uint64_t rows = 0;
    for (std::size_t k = 0; k < ws.size(); ++k) {
        const std::size_t d = outs[k].size();
        require(ws[k].size() == d * n, "fused_rmsnorm_matmuls: shape mismatch");
        for (std::size_t i = 0; i < d; ++i)
            outs[k][i] = float(dot(ws[k].data() + i * n, norm_scratch.data(), n));
        rows += d;
    }
    if (tc) {
        tc->intermediate_writes += rows;
        tc->weight_reads += n + rows * n;
    }
}

void fused_ffn(std::span<float> out, std::span<const float> x,
               std::span<const float> norm_weight, std::span<const float> w1,
               std::span<const float> w2, std::span<const float> w3,
               std::span<float> h1, std::span<float> h3,
               std::span<float> norm_scratch, TrafficCounter* tc) {
    const std::size_t n = x.size(), hidden = h1.size();
    require(h3.size() == hidden && out.size() == n, "fused_ffn: length mismatch");
    require(w1.size() == hidden * n && w3.size() == hidden * n && w2.size() == n * hidden,
            "fused_ffn: shape mismatch");
    require(norm_scratch.size() == n, "fused_ffn: scratch length mismatch");

    rmsnorm(norm_scratch, x, norm_weight, nullptr);
    // row-interleaved w1/w3 pass, gate formed while both dots are in registers
    for (std::size_t i = 0; i < hidden; ++i) {
        const float a = float(dot(w1.data() + i * n, norm_scratch.data(), n));
        const float b = float(dot(w3.data() + i * n, norm_scratch.data(), n));
        h3[i] = b;
        h1[i] = silu(a) * b;
    }
    for (std::size_t i = 0; i < n; ++i)
        out[i] = float(dot(w2.data() + i * hidden, h1.data(), hidden));
    if (tc) {
        tc->intermediate_writes += 2 * hidden + n;
        tc->intermediate_reads += hidden;
        tc->weight_reads += n + 3 * hidden * n;
    }
}

}  // namespace llamaflow::kernels
