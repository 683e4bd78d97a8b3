#pragma once

#include <algorithm>
#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "elib/config.hpp"
#include "elib/metrics.hpp"
#include "elib/model.hpp"
#include "elib/report.hpp"
#include "elib/runtime.hpp"
#include "elib/textio.hpp"

namespace elib {

/// Test-only failure injection, selected through the environment:
///   ELIB_FAIL_INJECT="q5_0:1:timeout,q4_0:2:memory_overflow"
struct FailureInjection {
    Scheme scheme;
    int iteration;  // 1-based
    SkipReason reason;
};

inline std::vector<FailureInjection> parse_injections(const std::string& text) {
    std::vector<FailureInjection> out;
    for (const std::string& entry : detail::split_list(text)) {
        const size_t c1 = entry.find(':');
        const size_t c2 = entry.find(':', c1 == std::string::npos ? c1 : c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos) {
            throw ConfigError("malformed failure injection: " + entry);
        }
        FailureInjection inj{scheme_from_name(entry.substr(0, c1)),
                             std::stoi(entry.substr(c1 + 1, c2 - c1 - 1)),
                             skip_reason_from_name(entry.substr(c2 + 1))};
        out.push_back(inj);
    }
    return out;
}

inline std::vector<FailureInjection> injections_from_env() {
    const char* env = std::getenv("ELIB_FAIL_INJECT");
    return env ? parse_injections(env) : std::vector<FailureInjection>{};
}

namespace detail {

/// Wall-clock guard beside a generation session. Total overrun maps to
/// timeout; a stall with no new token inside the same budget maps to
/// deadlock.
class Watchdog {
public:
    Watchdog(CancelToken& token, double timeout_seconds) : token_(token), timeout_(timeout_seconds) {
        const double start = now_seconds();
        token_.last_progress.store(start);
        thread_ = std::thread([this, start] {
            while (!done_.load()) {
                const double now = now_seconds();
                if (now - start > timeout_) {
                    token_.reason.store(static_cast<int>(SkipReason::timeout));
                    return;
                }
                if (now - token_.last_progress.load() > timeout_) {
                    token_.reason.store(static_cast<int>(SkipReason::deadlock));
                    return;
                }
                std::this_thread::sleep_for(std::chrono::milliseconds(2));
            }
        });
    }
    ~Watchdog() {
        done_.store(true);
        if (thread_.joinable()) thread_.join();
    }

private:
    CancelToken& token_;
    double timeout_;
    std::atomic<bool> done_{false};
    std::thread thread_;
};

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

struct DeployedModel {
    Model model;
    double t_load = 0.0;
    ExecPlan plan;
    uint32_t kv_capacity = 0;
    uint64_t kv_bytes = 0;  // at capacity
};

/// "Adapt and deploy" step: load, select the kernel backend, size
/// the KV cache, and verify the memory constraint before any inference.
/// Returns nullopt when the model cannot fit (skipped(memory_overflow)).
inline std::optional<DeployedModel> adapt_and_deploy(const std::string& model_path,
                                                     const BenchConfig& cfg) {
    DeployedModel dep;
    auto [model, t_load] = load_model(model_path);
    dep.model = std::move(model);
    dep.t_load = t_load;
    dep.plan.backend = backend_from_name(cfg.dev.backend);
    dep.plan.threads = cfg.dev.thread_counts.empty() ? 1 : cfg.dev.thread_counts.front();

    uint32_t capacity = cfg.bench.kv_capacity == 0 ? dep.model.spec.max_seq : cfg.bench.kv_capacity;
    capacity = std::min(capacity, dep.model.spec.max_seq);
    dep.kv_capacity = capacity;
    dep.kv_bytes = kv_cache_size(dep.model.spec, static_cast<uint64_t>(cfg.bench.batch), capacity,
                                 cfg.bench.databyte);

    uint64_t budget = cfg.dev.device.ram_bytes;
    if (cfg.bench.memory_limit_bytes > 0) {
        budget = std::min(budget, cfg.bench.memory_limit_bytes);
    }
    if (dep.model.param_bytes + dep.kv_bytes > budget) {
        return std::nullopt;
    }
    return dep;
}

/// "Guarded inference" step: run generation under the watchdog;
/// every failure becomes a skip reason, never an exception to the sweep.
inline std::optional<SkipReason> guarded_inference(DeployedModel& dep, KvCache& kv,
                                                   std::span<const int> prompt,
                                                   const GenerationParams& params,
                                                   double timeout_seconds,
                                                   std::optional<SkipReason> injected,
                                                   GenerateResult* out) {
    if (injected == SkipReason::memory_overflow) return SkipReason::memory_overflow;
    CancelToken token;
    if (injected == SkipReason::timeout) {
        token.reason.store(static_cast<int>(SkipReason::timeout));
    } else if (injected == SkipReason::deadlock) {
        token.reason.store(static_cast<int>(SkipReason::deadlock));
    }
    detail::Watchdog watchdog(token, timeout_seconds);
    Session session(dep.model, kv, dep.plan);
    try {
        *out = session.generate(prompt, params, &token);
        out->trace.t_load = dep.t_load;
    } catch (const SkipSignal& skip) {
        return skip.reason;
    }
    return std::nullopt;
}

/// The benchmark loop end to end: quantize once, then sweep iterations x schemes,
/// recording one outcome per cell and skipping failed cells.
inline ReportDocument run_benchmark(const BenchConfig& cfg) {
    validate_config(cfg);
    ReportDocument doc;
    doc.config = cfg;
    doc.device = cfg.dev.device;

    const std::vector<FailureInjection> injections = injections_from_env();

    // automatic quantization flow, cached beside the source model
    Model source = load_model(cfg.original_model).first;
    std::map<Scheme, std::string> quantized_paths;
    for (Scheme scheme : cfg.schemes) {
        const std::string path = cfg.original_model + "." + scheme_name(scheme) + ".elib";
        write_model(quantize_model(source, scheme), path);
        quantized_paths[scheme] = path;
    }

    std::vector<int> prompt;
    if (!cfg.prompt_data.empty()) {
        const auto prompts = load_prompts(cfg.prompt_data);
        if (prompts.empty()) throw ConfigError("prompt file has no prompts: " + cfg.prompt_data);
        prompt = Tokenizer::encode(prompts.front());
    } else {
        prompt = Tokenizer::encode("The quick brown fox jumps over the lazy dog.");
    }
    prompt.insert(prompt.begin(), Tokenizer::kBos);

    std::optional<EvalCorpus> corpus;
    if (!cfg.corpus.empty()) {
        corpus = load_corpus(cfg.corpus, cfg.bench.context_len, cfg.bench.stride);
    }

    GenerationParams params;
    params.max_new_tokens = cfg.bench.max_new_tokens;
    params.temperature = cfg.bench.temperature;
    params.top_k = cfg.bench.top_k;
    params.top_p = cfg.bench.top_p;
    params.repeat_last_n = cfg.bench.repeat_last_n;
    params.repeat_penalty = cfg.bench.repeat_penalty;
    params.seed = cfg.bench.seed;

    for (int iter = 1; iter <= cfg.bench.iteration; ++iter) {
        for (Scheme scheme : cfg.schemes) {
            RunOutcome outcome;
            outcome.scheme = scheme;
            outcome.iteration = iter;

            std::optional<SkipReason> injected;
            for (const FailureInjection& inj : injections) {
                if (inj.scheme == scheme && inj.iteration == iter) injected = inj.reason;
            }

            auto deployed = adapt_and_deploy(quantized_paths.at(scheme), cfg);
            if (!deployed || injected == SkipReason::memory_overflow) {
                outcome.status = "skipped";
                outcome.reason = skip_reason_name(SkipReason::memory_overflow);
                doc.outcomes.push_back(std::move(outcome));
                continue;
            }

            KvCache kv = KvCache::allocate(deployed->model.spec, 1, deployed->kv_capacity,
                                           cfg.bench.databyte);
            GenerateResult gen;
            const auto skip = guarded_inference(*deployed, kv, prompt, params,
                                                cfg.bench.timeout_seconds, injected, &gen);
            if (skip) {
                outcome.status = "skipped";
                outcome.reason = skip_reason_name(*skip);
                doc.outcomes.push_back(std::move(outcome));
                continue;
            }

            MetricsReport m;
            m.device = cfg.dev.device.name;
            m.backend = cfg.dev.backend;
            m.scheme = scheme;
            m.param_bytes = deployed->model.param_bytes;
            m.tokens = gen.tokens;
            m.flop_count = gen.trace.flop_count;

            for (int threads : cfg.dev.thread_counts) {
                ExecPlan plan{deployed->plan.backend, threads};
                m.flops_by_threads[threads] =
                    flops_microbench(plan, cfg.bench.flops_dim, cfg.bench.flops_reps);
            }

            const LatencySummary lat = throughput_and_latency(gen.trace);
            m.ttlm = round6(lat.ttlm);
            m.ttft = round6(lat.ttft);
            if (lat.throughput) m.throughput = *lat.throughput;
            if (lat.tpot) m.tpot = *lat.tpot;

            // cache footprint evaluated at the session's current filled length
            m.kv_bytes = kv_cache_size(deployed->model.spec, 1, kv.position(), cfg.bench.databyte);
            if (lat.tpot) {
                const double bw = achieved_bandwidth(m.param_bytes, m.kv_bytes, *lat.tpot);
                m.mbu = mbu(bw, cfg.dev.device.peak_bandwidth);
                m.mbu_over_peak = *m.mbu > 1.0;
            }
            if (corpus) {
                m.perplexity = perplexity(deployed->model, *corpus, deployed->plan);
            }

            outcome.status = "ok";
            outcome.metrics = std::move(m);
            doc.outcomes.push_back(std::move(outcome));
        }
        if (cfg.schemes.empty()) break;  // all feasible models tested
    }

    // median aggregates per (scheme, backend)
    for (Scheme scheme : cfg.schemes) {
        std::vector<const MetricsReport*> rows;
        for (const RunOutcome& o : doc.outcomes) {
            if (o.scheme == scheme && o.status == "ok") rows.push_back(&*o.metrics);
        }
        if (rows.empty()) continue;
        MetricsReport agg;
        agg.device = rows.front()->device;
        agg.backend = rows.front()->backend;
        agg.scheme = scheme;
        agg.param_bytes = rows.front()->param_bytes;
        agg.kv_bytes = rows.front()->kv_bytes;

        auto collect = [&](auto&& get) {
            std::vector<double> vals;
            for (const MetricsReport* r : rows) {
                if (auto v = get(*r)) vals.push_back(*v);
            }
            return vals;
        };
        for (const auto& [threads, _] : rows.front()->flops_by_threads) {
            const int t = threads;
            agg.flops_by_threads[t] = detail::median(collect([t](const MetricsReport& r) {
                auto it = r.flops_by_threads.find(t);
                return it != r.flops_by_threads.end() ? std::optional<double>(it->second)
                                                      : std::nullopt;
            }));
        }
        agg.ttlm = round6(detail::median(
            collect([](const MetricsReport& r) { return std::optional<double>(r.ttlm); })));
        agg.ttft = round6(detail::median(
            collect([](const MetricsReport& r) { return std::optional<double>(r.ttft); })));
        const auto tps = collect([](const MetricsReport& r) { return r.throughput; });
        if (!tps.empty()) {
            agg.throughput = detail::median(tps);
            agg.tpot = 1.0 / *agg.throughput;  // tpot stays the exact inverse
        }
        const auto mbus = collect([](const MetricsReport& r) { return r.mbu; });
        if (!mbus.empty()) {
            agg.mbu = detail::median(mbus);
            agg.mbu_over_peak = *agg.mbu > 1.0;
        }
        const auto ppls = collect([](const MetricsReport& r) { return r.perplexity; });
        if (!ppls.empty()) agg.perplexity = detail::median(ppls);
        agg.flop_count = rows.front()->flop_count;
        doc.aggregates.push_back(std::move(agg));
    }

    return doc;
}

}  // namespace elib
