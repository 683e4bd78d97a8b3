#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "elib/error.hpp"
#include "elib/kernels.hpp"
#include "elib/kv_cache.hpp"
#include "elib/model.hpp"
#include "elib/sampler.hpp"
#include "elib/textio.hpp"

namespace elib {

inline double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

struct InferenceTrace {
    double t_load = 0.0;
    double t_prompt_start = 0.0;
    double t_first_token = 0.0;
    double t_last_token = 0.0;
    uint32_t n_prompt_tokens = 0;
    uint32_t n_generated_tokens = 0;
    uint64_t flop_count = 0;
    uint64_t kv_bytes = 0;
};

/// Cooperative cancellation shared with the harness watchdog. The runtime
/// publishes progress at token boundaries; the watchdog sets a skip reason.
struct CancelToken {
    std::atomic<int> reason{0};  // 0 = none, otherwise a SkipReason value
    std::atomic<double> last_progress{0.0};
    void progress() { last_progress.store(now_seconds()); }
};

enum class SkipReason : int { none = 0, timeout = 1, memory_overflow = 2, deadlock = 3 };

inline const char* skip_reason_name(SkipReason r) {
    switch (r) {
        case SkipReason::timeout: return "timeout";
        case SkipReason::memory_overflow: return "memory_overflow";
        case SkipReason::deadlock: return "deadlock";
        default: return "none";
    }
}

inline SkipReason skip_reason_from_name(const std::string& name) {
    for (SkipReason r : {SkipReason::timeout, SkipReason::memory_overflow, SkipReason::deadlock}) {
        if (name == skip_reason_name(r)) return r;
    }
    throw ConfigError("unknown skip reason: " + name);
}

/// Thrown when a guarded run is converted into a skipped outcome.
struct SkipSignal {
    SkipReason reason;
};

struct GenerateResult {
    std::vector<int> tokens;
    InferenceTrace trace;
};

/// One single-writer inference session over an immutable model and an owned
/// KV cache. LLaMA-style graph: RMSNorm pre-norm, rotary embeddings, SwiGLU,
/// no biases. Activations stay f32; quantized weights decode inside matvec.
class Session {
public:
    static constexpr float kNormEps = 1e-5f;

    Session(const Model& model, KvCache& kv, ExecPlan plan)
        : model_(model), kv_(kv), plan_(plan) {
        validate_model(model);
        if (kv.databyte() != 4 && kv.databyte() != 2) {
            throw Error("session: kv cache databyte must be 2 or 4");
        }
        const ModelSpec& s = model.spec;
        x_.resize(s.d_model);
        h_.resize(s.d_model);
        q_.resize(s.d_model);
        k_.resize(s.kv_dim());
        v_.resize(s.kv_dim());
        att_.resize(s.d_model);
        ffn_gate_.resize(s.d_ff);
        ffn_up_.resize(s.d_ff);
        scores_.resize(kv.capacity() > 0 ? kv.capacity() : 1);
        for (uint32_t i = 0; i < s.n_layers; ++i) {
            const std::string p = "layers." + std::to_string(i) + ".";
            layers_.push_back(LayerWeights{
                model.tensor(p + "attention_norm.weight").f32(),
                ConstMat::from_tensor(model.tensor(p + "wq.weight")),
                ConstMat::from_tensor(model.tensor(p + "wk.weight")),
                ConstMat::from_tensor(model.tensor(p + "wv.weight")),
                ConstMat::from_tensor(model.tensor(p + "wo.weight")),
                model.tensor(p + "ffn_norm.weight").f32(),
                ConstMat::from_tensor(model.tensor(p + "ffn_gate.weight")),
                ConstMat::from_tensor(model.tensor(p + "ffn_up.weight")),
                ConstMat::from_tensor(model.tensor(p + "ffn_down.weight")),
            });
        }
        out_norm_ = model.tensor("output_norm.weight").f32();
        out_proj_ = ConstMat::from_tensor(model.tensor("output.weight"));
    }

    const KvCache& kv() const { return kv_; }
    uint64_t flop_count() const { return flops_.load(); }

    /// Feed one token at the current cache position; returns the logits.
    std::vector<float> step(int token) {
        if (kv_.position() >= kv_.capacity()) {
            throw CapacityError("session: kv cache full");
        }
        return forward(token);
    }

    /// Process a whole prompt; returns logits for the last prompt token.
    std::vector<float> prefill(std::span<const int> tokens) {
        if (kv_.position() != 0) throw Error("prefill requires an empty cache");
        if (tokens.empty()) throw Error("prefill: empty prompt");
        if (tokens.size() > kv_.capacity()) {
            throw CapacityError("prompt longer than kv cache capacity");
        }
        std::vector<float> logits;
        for (int tok : tokens) logits = forward(tok);
        return logits;
    }

    /// Append one token after a prefill; exactly one new key/value row per
    /// layer is written.
    std::vector<float> decode_step(int token) {
        if (kv_.position() == 0) throw Error("decode_step requires a prior prefill");
        if (kv_.position() >= kv_.capacity()) {
            throw CapacityError("decode_step: kv cache full");
        }
        return forward(token);
    }

    GenerateResult generate(std::span<const int> prompt, const GenerationParams& params,
                            CancelToken* cancel = nullptr) {
        params.validate(model_.spec.vocab_size);
        GenerateResult res;
        res.trace.kv_bytes = kv_.total_bytes();
        res.trace.n_prompt_tokens = static_cast<uint32_t>(prompt.size());

        std::mt19937_64 rng(params.seed);
        std::vector<int> history(prompt.begin(), prompt.end());

        res.trace.t_prompt_start = now_seconds();
        std::vector<float> logits = prefill(prompt);
        check_cancel(cancel);

        int tok = sample(logits, history, params, rng);
        res.trace.t_first_token = now_seconds();
        res.tokens.push_back(tok);
        history.push_back(tok);
        if (cancel) cancel->progress();

        while (static_cast<int>(res.tokens.size()) < params.max_new_tokens &&
               tok != Tokenizer::kEos && kv_.position() < kv_.capacity()) {
            check_cancel(cancel);
            logits = decode_step(tok);
            tok = sample(logits, history, params, rng);
            res.tokens.push_back(tok);
            history.push_back(tok);
            if (cancel) cancel->progress();
        }

        res.trace.t_last_token =
            res.tokens.size() == 1 ? res.trace.t_first_token : now_seconds();
        res.trace.n_generated_tokens = static_cast<uint32_t>(res.tokens.size());
        res.trace.flop_count = flops_.load();
        return res;
    }

private:
    struct LayerWeights {
        const float* attn_norm;
        ConstMat wq, wk, wv, wo;
        const float* ffn_norm;
        ConstMat gate, up, down;
    };

    static void check_cancel(CancelToken* cancel) {
        if (!cancel) return;
        const int r = cancel->reason.load();
        if (r != 0) throw SkipSignal{static_cast<SkipReason>(r)};
    }

    std::vector<float> forward(int token) {
        const ModelSpec& s = model_.spec;
        if (token < 0 || static_cast<uint32_t>(token) >= s.vocab_size) {
            throw TokenError("token id out of range: " + std::to_string(token));
        }
        const uint32_t pos = kv_.position();
        const uint32_t hd = s.head_dim();
        const uint32_t group = s.n_heads / s.n_kv_heads;
        const float inv_sqrt_hd = 1.0f / std::sqrt(static_cast<float>(hd));

        model_.tensor("tok_embeddings.weight").load_row(static_cast<size_t>(token), x_.data());

        for (uint32_t li = 0; li < s.n_layers; ++li) {
            const LayerWeights& w = layers_[li];

            rmsnorm(x_.data(), w.attn_norm, h_.data(), s.d_model, kNormEps);
            matvec(w.wq, h_.data(), q_.data(), plan_, &flops_);
            matvec(w.wk, h_.data(), k_.data(), plan_, &flops_);
            matvec(w.wv, h_.data(), v_.data(), plan_, &flops_);

            for (uint32_t head = 0; head < s.n_heads; ++head) {
                rope_apply(q_.data() + head * hd, hd, pos, s.rope_base);
            }
            for (uint32_t head = 0; head < s.n_kv_heads; ++head) {
                rope_apply(k_.data() + head * hd, hd, pos, s.rope_base);
            }
            kv_.write_row(true, li, pos, k_.data());
            kv_.write_row(false, li, pos, v_.data());

            const uint32_t span = pos + 1;
            for (uint32_t head = 0; head < s.n_heads; ++head) {
                const uint32_t kvh = head / group;
                const float* qh = q_.data() + head * hd;
                for (uint32_t p = 0; p < span; ++p) {
                    float dot = 0.0f;
                    for (uint32_t d = 0; d < hd; ++d) dot += qh[d] * kv_.at(true, li, p, kvh, d);
                    scores_[p] = dot;
                }
                softmax_rows(scores_.data(), 1, span, inv_sqrt_hd);
                float* oh = att_.data() + head * hd;
                for (uint32_t d = 0; d < hd; ++d) oh[d] = 0.0f;
                for (uint32_t p = 0; p < span; ++p) {
                    const float prob = scores_[p];
                    for (uint32_t d = 0; d < hd; ++d) {
                        oh[d] += prob * kv_.at(false, li, p, kvh, d);
                    }
                }
            }
            // attention scores and value mixing are dot products too
            flops_ += 2ull * span * s.d_model + 2ull * span * s.d_model;

            matvec(w.wo, att_.data(), h_.data(), plan_, &flops_);
            for (uint32_t i = 0; i < s.d_model; ++i) x_[i] += h_[i];

            rmsnorm(x_.data(), w.ffn_norm, h_.data(), s.d_model, kNormEps);
            matvec(w.gate, h_.data(), ffn_gate_.data(), plan_, &flops_);
            matvec(w.up, h_.data(), ffn_up_.data(), plan_, &flops_);
            for (uint32_t i = 0; i < s.d_ff; ++i) {
                ffn_gate_[i] = silu(ffn_gate_[i]) * ffn_up_[i];
            }
            matvec_t(w.down, ffn_gate_.data(), h_.data(), plan_, &flops_);
            for (uint32_t i = 0; i < s.d_model; ++i) x_[i] += h_[i];
        }

        rmsnorm(x_.data(), out_norm_, h_.data(), s.d_model, kNormEps);
        std::vector<float> logits(s.vocab_size);
        matvec(out_proj_, h_.data(), logits.data(), plan_, &flops_);
        kv_.advance();
        return logits;
    }

    const Model& model_;
    KvCache& kv_;
    ExecPlan plan_;
    FlopCounter flops_{0};
    std::vector<LayerWeights> layers_;
    const float* out_norm_ = nullptr;
    ConstMat out_proj_;
    std::vector<float> x_, h_, q_, k_, v_, att_, ffn_gate_, ffn_up_, scores_;
};

/// Analytic matmul-term flop count for one forward pass of `tokens` tokens
/// starting from an empty cache. Matches the instrumented counter exactly.
inline uint64_t forward_flops(const ModelSpec& s, uint32_t tokens) {
    uint64_t total = 0;
    const uint64_t d = s.d_model;
    const uint64_t kvd = s.kv_dim();
    for (uint32_t t = 0; t < tokens; ++t) {
        const uint64_t span = t + 1;
        uint64_t per_layer = 0;
        per_layer += 2 * d * d;        // wq
        per_layer += 2 * kvd * d * 2;  // wk, wv
        per_layer += 2 * span * d * 2; // attention scores + value mixing
        per_layer += 2 * d * d;        // wo
        per_layer += 2 * s.d_ff * d * 2 + 2 * d * s.d_ff;  // gate, up, down
        total += s.n_layers * per_layer;
        total += 2 * static_cast<uint64_t>(s.vocab_size) * d;  // output head
    }
    return total;
}

}  // namespace elib
