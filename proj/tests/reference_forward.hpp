#pragma once

// Test-only full-recompute transformer forward: no KV cache, the whole
// sequence is re-evaluated with plain loops. Serves as the oracle for the
// incremental decode path.

#include <cmath>
#include <limits>
#include <vector>

#include "elib/model.hpp"
#include "elib/tensor.hpp"

namespace elib_test {

inline void ref_rmsnorm(const float* x, const float* g, float* out, size_t n, float eps) {
    double ss = 0.0;
    for (size_t i = 0; i < n; ++i) ss += static_cast<double>(x[i]) * x[i];
    const float inv = 1.0f / std::sqrt(static_cast<float>(ss / static_cast<double>(n)) + eps);
    for (size_t i = 0; i < n; ++i) out[i] = x[i] * inv * g[i];
}

inline void ref_matvec(const elib::Tensor& w, const float* x, float* y) {
    const size_t rows = w.rows(), cols = w.cols();
    for (size_t r = 0; r < rows; ++r) {
        const float* row = w.f32() + r * cols;
        float acc = 0.0f;
        for (size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
}

inline void ref_matvec_t(const elib::Tensor& w, const float* x, float* y) {
    const size_t rows = w.rows(), cols = w.cols();
    for (size_t j = 0; j < cols; ++j) {
        float acc = 0.0f;
        for (size_t i = 0; i < rows; ++i) acc += w.f32()[i * cols + j] * x[i];
        y[j] = acc;
    }
}

inline void ref_rope(float* head, size_t hd, size_t pos, float base) {
    for (size_t i = 0; 2 * i < hd; ++i) {
        const double freq = std::pow(static_cast<double>(base),
                                     -2.0 * static_cast<double>(i) / static_cast<double>(hd));
        const double angle = static_cast<double>(pos) * freq;
        const float c = static_cast<float>(std::cos(angle));
        const float s = static_cast<float>(std::sin(angle));
        const float a = head[2 * i], b = head[2 * i + 1];
        head[2 * i] = a * c - b * s;
        head[2 * i + 1] = a * s + b * c;
    }
}

/// Logits at every position of `tokens`, full causal attention each time.
inline std::vector<std::vector<float>> reference_forward(const elib::Model& model,
                                                         const std::vector<int>& tokens) {
    const elib::ModelSpec& s = model.spec;
    const size_t T = tokens.size();
    const size_t d = s.d_model, hd = s.head_dim(), kvd = s.kv_dim();
    const size_t group = s.n_heads / s.n_kv_heads;
    const float eps = 1e-5f;

    // materialize everything as f32 once
    std::vector<elib::Tensor> f32;
    for (const elib::Tensor& t : model.tensors) f32.push_back(elib::dequantize_tensor(t));
    auto tensor = [&](const std::string& name) -> const elib::Tensor& {
        for (const elib::Tensor& t : f32) {
            if (t.name == name) return t;
        }
        throw elib::ValidationError("reference: missing tensor " + name);
    };

    std::vector<std::vector<float>> X(T, std::vector<float>(d));
    for (size_t t = 0; t < T; ++t) {
        tensor("tok_embeddings.weight").load_row(static_cast<size_t>(tokens[t]), X[t].data());
    }

    std::vector<float> h(d), q(d), att(d);
    std::vector<std::vector<float>> K(T, std::vector<float>(kvd)), V(T, std::vector<float>(kvd));
    std::vector<float> gate(s.d_ff), up(s.d_ff);

    for (uint32_t li = 0; li < s.n_layers; ++li) {
        const std::string p = "layers." + std::to_string(li) + ".";
        const elib::Tensor& attn_norm = tensor(p + "attention_norm.weight");
        const elib::Tensor& wq = tensor(p + "wq.weight");
        const elib::Tensor& wk = tensor(p + "wk.weight");
        const elib::Tensor& wv = tensor(p + "wv.weight");
        const elib::Tensor& wo = tensor(p + "wo.weight");
        const elib::Tensor& ffn_norm = tensor(p + "ffn_norm.weight");
        const elib::Tensor& wg = tensor(p + "ffn_gate.weight");
        const elib::Tensor& wu = tensor(p + "ffn_up.weight");
        const elib::Tensor& wd = tensor(p + "ffn_down.weight");

        std::vector<std::vector<float>> Q(T, std::vector<float>(d));
        for (size_t t = 0; t < T; ++t) {
            ref_rmsnorm(X[t].data(), attn_norm.f32(), h.data(), d, eps);
            ref_matvec(wq, h.data(), Q[t].data());
            ref_matvec(wk, h.data(), K[t].data());
            ref_matvec(wv, h.data(), V[t].data());
            for (uint32_t head = 0; head < s.n_heads; ++head) {
                ref_rope(Q[t].data() + head * hd, hd, t, s.rope_base);
            }
            for (uint32_t head = 0; head < s.n_kv_heads; ++head) {
                ref_rope(K[t].data() + head * hd, hd, t, s.rope_base);
            }
        }

        for (size_t t = 0; t < T; ++t) {
            for (uint32_t head = 0; head < s.n_heads; ++head) {
                const size_t kvh = head / group;
                const float* qh = Q[t].data() + head * hd;
                std::vector<float> scores(t + 1);
                float maxv = -std::numeric_limits<float>::infinity();
                const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
                for (size_t u = 0; u <= t; ++u) {
                    float dot = 0.0f;
                    const float* kh = K[u].data() + kvh * hd;
                    for (size_t i = 0; i < hd; ++i) dot += qh[i] * kh[i];
                    scores[u] = dot;
                    maxv = std::max(maxv, dot * scale);
                }
                float sum = 0.0f;
                for (size_t u = 0; u <= t; ++u) {
                    scores[u] = std::exp(scores[u] * scale - maxv);
                    sum += scores[u];
                }
                float* oh = att.data() + head * hd;
                for (size_t i = 0; i < hd; ++i) oh[i] = 0.0f;
                for (size_t u = 0; u <= t; ++u) {
                    const float prob = scores[u] / sum;
                    const float* vh = V[u].data() + kvh * hd;
                    for (size_t i = 0; i < hd; ++i) oh[i] += prob * vh[i];
                }
            }
            ref_matvec(wo, att.data(), h.data());
            for (size_t i = 0; i < d; ++i) X[t][i] += h[i];

            ref_rmsnorm(X[t].data(), ffn_norm.f32(), h.data(), d, eps);
            ref_matvec(wg, h.data(), gate.data());
            ref_matvec(wu, h.data(), up.data());
            for (size_t i = 0; i < s.d_ff; ++i) {
                gate[i] = gate[i] / (1.0f + std::exp(-gate[i])) * up[i];
            }
            ref_matvec_t(wd, gate.data(), h.data());
            for (size_t i = 0; i < d; ++i) X[t][i] += h[i];
        }
    }

    const elib::Tensor& out_norm = tensor("output_norm.weight");
    const elib::Tensor& out_proj = tensor("output.weight");
    std::vector<std::vector<float>> logits(T, std::vector<float>(s.vocab_size));
    for (size_t t = 0; t < T; ++t) {
        ref_rmsnorm(X[t].data(), out_norm.f32(), h.data(), d, eps);
        ref_matvec(out_proj, h.data(), logits[t].data());
    }
    return logits;
}

}  // namespace elib_test
