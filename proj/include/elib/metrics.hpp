#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "elib/error.hpp"
#include "elib/kernels.hpp"
#include "elib/runtime.hpp"
#include "elib/textio.hpp"

namespace elib {

struct DeviceProfile {
    std::string name;
    double peak_bandwidth = 0.0;  // bytes/second
    uint64_t ram_bytes = 0;
    std::vector<int> thread_counts;

    void validate() const {
        if (!(peak_bandwidth > 0.0)) throw MetricError("device profile: peak_bandwidth must be > 0");
        if (ram_bytes == 0) throw MetricError("device profile: ram_bytes must be > 0");
    }

    bool operator==(const DeviceProfile&) const = default;
};

inline constexpr uint64_t kGiB = 1024ull * 1024 * 1024;

/// Shipped presets: peak bandwidths of the three reference edge devices.
inline std::vector<DeviceProfile> device_presets() {
    return {
        {"nanopi", 34e9, 16 * kGiB, {4, 8}},
        {"xiaomi", 26e9, 16 * kGiB, {4, 8}},
        {"macbook_m2", 50e9, 16 * kGiB, {4, 8}},
    };
}

inline DeviceProfile device_preset(const std::string& name) {
    for (const DeviceProfile& d : device_presets()) {
        if (d.name == name) return d;
    }
    throw ConfigError("unknown device profile: " + name);
}

/// KV cache size in bytes: batch * seqlen * (d_model/n_heads) * n_layers *
/// n_kv_heads * databyte * 2, exact integer arithmetic.
inline uint64_t kv_cache_size(const ModelSpec& spec, uint64_t batch, uint64_t seqlen,
                              uint64_t databyte) {
    if (spec.n_heads == 0 || spec.d_model % spec.n_heads != 0) {
        throw SpecError("kv_cache_size: d_model must be divisible by n_heads");
    }
    if (batch == 0 || databyte == 0) {
        throw MetricError("kv_cache_size: batch and databyte must be positive");
    }
    return batch * seqlen * (spec.d_model / spec.n_heads) * spec.n_layers * spec.n_kv_heads *
           databyte * 2;
}

/// Bytes streamed per token over the time to produce it.
inline double achieved_bandwidth(uint64_t param_bytes, uint64_t kv_bytes, double tpot_seconds) {
    if (!(tpot_seconds > 0.0)) throw MetricError("achieved_bandwidth: tpot must be > 0");
    return (static_cast<double>(param_bytes) + static_cast<double>(kv_bytes)) / tpot_seconds;
}

/// Model Bandwidth Utilization. Values above 1 are returned as-is; the report
/// layer flags them instead of clamping.
inline double mbu(double achieved, double peak) {
    if (!(peak > 0.0)) throw MetricError("mbu: peak bandwidth must be > 0");
    return achieved / peak;
}

struct LatencySummary {
    double ttlm = 0.0;
    double ttft = 0.0;
    std::optional<double> throughput;  // tokens/second, absent for 1-token runs
    std::optional<double> tpot;        // 1/throughput
};

/// TTFT starts at t_prompt_start (post-tokenization); throughput excludes the
/// first token's latency: (n-1)/(t_last - t_first).
inline LatencySummary throughput_and_latency(const InferenceTrace& trace) {
    if (trace.n_generated_tokens < 1) {
        throw MetricError("throughput_and_latency: trace has no generated tokens");
    }
    LatencySummary out;
    out.ttlm = trace.t_load;
    out.ttft = trace.t_first_token - trace.t_prompt_start;
    if (trace.n_generated_tokens >= 2) {
        const double span = trace.t_last_token - trace.t_first_token;
        if (!(span > 0.0)) throw MetricError("throughput_and_latency: non-positive token span");
        const double tps = static_cast<double>(trace.n_generated_tokens - 1) / span;
        out.throughput = tps;
        out.tpot = 1.0 / tps;
    }
    return out;
}

inline double gflops_value(uint64_t flop_count, double seconds) {
    return static_cast<double>(flop_count) / (seconds * 1e9);
}

/// Square matmul microbenchmark; the numerator is the exact integer flop
/// count, the denominator the median per-repetition wall time.
inline double flops_microbench(const ExecPlan& plan, int dims, int repetitions,
                               const std::function<double()>& clock = now_seconds) {
    if (dims < 64) throw MetricError("flops_microbench: dims must be >= 64");
    if (repetitions < 3) throw MetricError("flops_microbench: repetitions must be >= 3");
    const size_t n = static_cast<size_t>(dims);

    std::vector<float> A(n * n), B(n * n), C(n * n);
    uint64_t state = 0x243f6a8885a308d3ull;
    auto next01 = [&state] {
        state = state * 6364136223846793005ull + 1442695040888963407ull;
        return static_cast<float>(state >> 40) * 0x1.0p-24f;
    };
    for (auto& v : A) v = next01() - 0.5f;
    for (auto& v : B) v = next01() - 0.5f;

    const ConstMat bm = ConstMat::from_f32(B.data(), n, n);
    std::vector<double> times;
    times.reserve(repetitions);
    for (int r = 0; r < repetitions; ++r) {
        const double t0 = clock();
        matmul(A.data(), n, n, bm, C.data(), plan, nullptr);
        times.push_back(clock() - t0);
    }
    std::sort(times.begin(), times.end());
    const double median = times[times.size() / 2];
    if (!(median > 0.0)) {
        throw MetricError("flops_microbench: clock too coarse for this problem, increase dims");
    }
    return gflops_value(2ull * n * n * n, median);
}

/// Teacher-forced perplexity over windows. `logits_fn(window, pos)` returns
/// the logits after consuming window[0..pos]; positions 1..len-1 are scored.
template <class LogitsFn>
double perplexity_with(LogitsFn&& logits_fn, const EvalCorpus& corpus) {
    if (corpus.windows.empty()) throw MetricError("perplexity: empty corpus");
    double total_nll = 0.0;
    uint64_t predicted = 0;
    for (const auto& window : corpus.windows) {
        if (window.size() < 2) throw MetricError("perplexity: window shorter than 2 tokens");
        for (size_t pos = 0; pos + 1 < window.size(); ++pos) {
            const std::vector<float> logits = logits_fn(window, pos);
            const int target = window[pos + 1];
            if (target < 0 || static_cast<size_t>(target) >= logits.size()) {
                throw TokenError("perplexity: target token out of vocab");
            }
            double maxl = logits[0];
            for (float l : logits) maxl = std::max(maxl, static_cast<double>(l));
            double sum = 0.0;
            for (float l : logits) sum += std::exp(static_cast<double>(l) - maxl);
            const double log_z = maxl + std::log(sum);
            total_nll += log_z - static_cast<double>(logits[target]);
            ++predicted;
        }
    }
    return std::exp(total_nll / static_cast<double>(predicted));
}

inline double perplexity(const Model& model, const EvalCorpus& corpus, const ExecPlan& plan,
                         uint64_t* flop_count = nullptr) {
    if (corpus.windows.empty()) throw MetricError("perplexity: empty corpus");
    const uint32_t capacity =
        std::min<uint32_t>(model.spec.max_seq, static_cast<uint32_t>(corpus.context_len));
    uint64_t flops = 0;
    std::unique_ptr<KvCache> kv;
    std::unique_ptr<Session> session;
    // one fresh session per window, fed token by token
    double score = perplexity_with(
        [&](const std::vector<int>& window, size_t pos) {
            if (pos == 0) {
                kv = std::make_unique<KvCache>(KvCache::allocate(model.spec, 1, capacity));
                session = std::make_unique<Session>(model, *kv, plan);
            }
            std::vector<float> logits = session->step(window[pos]);
            if (pos + 2 == window.size()) flops += session->flop_count();
            return logits;
        },
        corpus);
    if (flop_count) *flop_count = flops;
    return score;
}

struct FeasibilityResult {
    bool pass = true;
    std::vector<std::string> reasons;  // "memory" and/or "latency"
};

/// Deployment constraints: params + KV cache must fit in device RAM, and total
/// latency ttft + tpot*n_out must fit the budget.
inline FeasibilityResult feasibility_check(const ModelSpec& spec, uint64_t param_bytes,
                                           const DeviceProfile& device, uint64_t batch,
                                           uint64_t seqlen, uint64_t databyte, double ttft,
                                           double tpot, uint64_t n_out, double latency_budget) {
    FeasibilityResult res;
    const uint64_t kv = kv_cache_size(spec, batch, seqlen, databyte);
    if (param_bytes + kv > device.ram_bytes) {
        res.pass = false;
        res.reasons.push_back("memory");
    }
    if (ttft + tpot * static_cast<double>(n_out) > latency_budget) {
        res.pass = false;
        res.reasons.push_back("latency");
    }
    return res;
}

/// One result row: per-(device, scheme, backend) metrics.
/// Fixed metric keys: gflops, tok_per_s, ttlm_s, ttft_s, tpot_s, mbu,
/// perplexity.
struct MetricsReport {
    std::string device;
    std::string backend;
    Scheme scheme = Scheme::F32;
    std::map<int, double> flops_by_threads;  // thread count -> GFLOPS
    std::optional<double> throughput;        // tok_per_s
    std::optional<double> tpot;              // tpot_s
    double ttlm = 0.0;                       // ttlm_s
    double ttft = 0.0;                       // ttft_s
    std::optional<double> mbu;
    bool mbu_over_peak = false;  // "check peak bandwidth" flag, never clamped
    std::optional<double> perplexity;
    uint64_t flop_count = 0;
    uint64_t param_bytes = 0;
    uint64_t kv_bytes = 0;
    std::vector<int> tokens;  // generated ids, empty in aggregates
};

}  // namespace elib
