#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "elib/config.hpp"
#include "elib/metrics.hpp"

namespace elib {

inline constexpr const char* kToolVersion = "0.1.0";

/// Timings are reported in seconds with 6 decimal places.
inline double round6(double v) { return std::round(v * 1e6) / 1e6; }

struct RunOutcome {
    Scheme scheme = Scheme::F32;
    int iteration = 0;  // 1-based
    std::string status; // "ok" | "skipped"
    std::string reason; // skip reason, empty when ok
    std::optional<MetricsReport> metrics;
};

struct ReportDocument {
    std::string tool_version = kToolVersion;
    BenchConfig config;  // full echo, enough to re-run bit-for-bit
    DeviceProfile device;
    std::vector<RunOutcome> outcomes;
    std::vector<MetricsReport> aggregates;  // per-(scheme, backend) medians
};

// --- json serialization -----------------------------------------------------

using json = nlohmann::json;

inline json to_json(const BenchConfig& c) {
    json j;
    j["original_model"] = c.original_model;
    json schemes = json::array();
    for (Scheme s : c.schemes) schemes.push_back(scheme_name(s));
    j["schemes"] = schemes;
    j["prompt_data"] = c.prompt_data;
    j["corpus"] = c.corpus;
    const auto& b = c.bench;
    j["benchmark_params"] = {
        {"iteration", b.iteration},
        {"batch", b.batch},
        {"max_new_tokens", b.max_new_tokens},
        {"top_k", b.top_k},
        {"top_p", b.top_p},
        {"repeat_last_n", b.repeat_last_n},
        {"repeat_penalty", b.repeat_penalty},
        {"temperature", b.temperature},
        {"seed", b.seed},
        {"context_len", b.context_len},
        {"stride", b.stride},
        {"timeout_seconds", b.timeout_seconds},
        {"memory_limit_bytes", b.memory_limit_bytes},
        {"flops_dim", b.flops_dim},
        {"flops_reps", b.flops_reps},
        {"kv_capacity", b.kv_capacity},
        {"databyte", b.databyte},
    };
    j["device_params"] = {
        {"profile", c.dev.profile},
        {"name", c.dev.device.name},
        {"peak_bandwidth", c.dev.device.peak_bandwidth},
        {"ram_bytes", c.dev.device.ram_bytes},
        {"thread_counts", c.dev.thread_counts},
        {"backend", c.dev.backend},
    };
    return j;
}

inline BenchConfig config_from_json(const json& j) {
    BenchConfig c;
    c.original_model = j.at("original_model").get<std::string>();
    for (const auto& s : j.at("schemes")) c.schemes.push_back(scheme_from_name(s.get<std::string>()));
    c.prompt_data = j.at("prompt_data").get<std::string>();
    c.corpus = j.at("corpus").get<std::string>();
    const auto& b = j.at("benchmark_params");
    c.bench.iteration = b.at("iteration").get<int>();
    c.bench.batch = b.at("batch").get<int>();
    c.bench.max_new_tokens = b.at("max_new_tokens").get<int>();
    c.bench.top_k = b.at("top_k").get<int>();
    c.bench.top_p = b.at("top_p").get<double>();
    c.bench.repeat_last_n = b.at("repeat_last_n").get<int>();
    c.bench.repeat_penalty = b.at("repeat_penalty").get<double>();
    c.bench.temperature = b.at("temperature").get<double>();
    c.bench.seed = b.at("seed").get<uint64_t>();
    c.bench.context_len = b.at("context_len").get<int>();
    c.bench.stride = b.at("stride").get<int>();
    c.bench.timeout_seconds = b.at("timeout_seconds").get<double>();
    c.bench.memory_limit_bytes = b.at("memory_limit_bytes").get<uint64_t>();
    c.bench.flops_dim = b.at("flops_dim").get<int>();
    c.bench.flops_reps = b.at("flops_reps").get<int>();
    c.bench.kv_capacity = b.at("kv_capacity").get<uint32_t>();
    c.bench.databyte = b.at("databyte").get<uint32_t>();
    const auto& d = j.at("device_params");
    c.dev.profile = d.at("profile").get<std::string>();
    c.dev.device.name = d.at("name").get<std::string>();
    c.dev.device.peak_bandwidth = d.at("peak_bandwidth").get<double>();
    c.dev.device.ram_bytes = d.at("ram_bytes").get<uint64_t>();
    c.dev.thread_counts = d.at("thread_counts").get<std::vector<int>>();
    c.dev.backend = d.at("backend").get<std::string>();
    c.dev.device.thread_counts = c.dev.thread_counts;
    return c;
}

inline json to_json(const MetricsReport& m) {
    json j;
    j["device"] = m.device;
    j["backend"] = m.backend;
    j["scheme"] = scheme_name(m.scheme);
    json fl = json::object();
    for (const auto& [threads, gflops] : m.flops_by_threads) {
        fl[std::to_string(threads)] = gflops;
    }
    j["gflops"] = fl;
    j["tok_per_s"] = m.throughput ? json(*m.throughput) : json(nullptr);
    j["tpot_s"] = m.tpot ? json(*m.tpot) : json(nullptr);
    j["ttlm_s"] = m.ttlm;
    j["ttft_s"] = m.ttft;
    j["mbu"] = m.mbu ? json(*m.mbu) : json(nullptr);
    j["mbu_over_peak"] = m.mbu_over_peak;
    j["perplexity"] = m.perplexity ? json(*m.perplexity) : json(nullptr);
    j["flop_count"] = m.flop_count;
    j["param_bytes"] = m.param_bytes;
    j["kv_bytes"] = m.kv_bytes;
    j["tokens"] = m.tokens;
    return j;
}

inline MetricsReport metrics_from_json(const json& j) {
    MetricsReport m;
    m.device = j.at("device").get<std::string>();
    m.backend = j.at("backend").get<std::string>();
    m.scheme = scheme_from_name(j.at("scheme").get<std::string>());
    for (const auto& [k, v] : j.at("gflops").items()) {
        m.flops_by_threads[std::stoi(k)] = v.get<double>();
    }
    if (!j.at("tok_per_s").is_null()) m.throughput = j.at("tok_per_s").get<double>();
    if (!j.at("tpot_s").is_null()) m.tpot = j.at("tpot_s").get<double>();
    m.ttlm = j.at("ttlm_s").get<double>();
    m.ttft = j.at("ttft_s").get<double>();
    if (!j.at("mbu").is_null()) m.mbu = j.at("mbu").get<double>();
    m.mbu_over_peak = j.at("mbu_over_peak").get<bool>();
    if (!j.at("perplexity").is_null()) m.perplexity = j.at("perplexity").get<double>();
    m.flop_count = j.at("flop_count").get<uint64_t>();
    m.param_bytes = j.at("param_bytes").get<uint64_t>();
    m.kv_bytes = j.at("kv_bytes").get<uint64_t>();
    m.tokens = j.at("tokens").get<std::vector<int>>();
    return m;
}

inline json to_json(const ReportDocument& doc) {
    json j;
    j["tool_version"] = doc.tool_version;
    j["config"] = to_json(doc.config);
    j["device"] = {
        {"name", doc.device.name},
        {"peak_bandwidth", doc.device.peak_bandwidth},
        {"ram_bytes", doc.device.ram_bytes},
        {"thread_counts", doc.device.thread_counts},
    };
    json outcomes = json::array();
    for (const RunOutcome& o : doc.outcomes) {
        json jo;
        jo["scheme"] = scheme_name(o.scheme);
        jo["iteration"] = o.iteration;
        jo["status"] = o.status;
        jo["reason"] = o.reason;
        jo["metrics"] = o.metrics ? to_json(*o.metrics) : json(nullptr);
        outcomes.push_back(std::move(jo));
    }
    j["outcomes"] = outcomes;
    json aggs = json::array();
    for (const MetricsReport& m : doc.aggregates) aggs.push_back(to_json(m));
    j["aggregates"] = aggs;
    return j;
}

inline ReportDocument report_from_json(const json& j) {
    ReportDocument doc;
    doc.tool_version = j.at("tool_version").get<std::string>();
    doc.config = config_from_json(j.at("config"));
    const auto& d = j.at("device");
    doc.device.name = d.at("name").get<std::string>();
    doc.device.peak_bandwidth = d.at("peak_bandwidth").get<double>();
    doc.device.ram_bytes = d.at("ram_bytes").get<uint64_t>();
    doc.device.thread_counts = d.at("thread_counts").get<std::vector<int>>();
    for (const auto& jo : j.at("outcomes")) {
        RunOutcome o;
        o.scheme = scheme_from_name(jo.at("scheme").get<std::string>());
        o.iteration = jo.at("iteration").get<int>();
        o.status = jo.at("status").get<std::string>();
        o.reason = jo.at("reason").get<std::string>();
        if (!jo.at("metrics").is_null()) o.metrics = metrics_from_json(jo.at("metrics"));
        doc.outcomes.push_back(std::move(o));
    }
    for (const auto& jm : j.at("aggregates")) doc.aggregates.push_back(metrics_from_json(jm));
    return doc;
}

// --- csv / table rendering --------------------------------------------------

namespace detail {

inline std::string fmt_fixed(double v, int places = 6) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(places) << v;
    return ss.str();
}

inline std::string fmt_opt(const std::optional<double>& v, int places) {
    return v ? fmt_fixed(*v, places) : std::string("-");
}

inline int scheme_rank(Scheme s) {
    switch (s) {
        case Scheme::Q4_0: return 0;
        case Scheme::Q4_1: return 1;
        case Scheme::Q5_0: return 2;
        case Scheme::Q5_1: return 3;
        case Scheme::Q8_0: return 4;
        case Scheme::F16: return 5;
        case Scheme::F32: return 6;
    }
    return 7;
}

}  // namespace detail

/// CSV flattens the aggregates only; skipped outcomes live in the json form.
inline std::string to_csv(const ReportDocument& doc) {
    std::vector<int> threads;
    for (const MetricsReport& m : doc.aggregates) {
        for (const auto& [t, _] : m.flops_by_threads) {
            if (std::find(threads.begin(), threads.end(), t) == threads.end()) threads.push_back(t);
        }
    }
    std::sort(threads.begin(), threads.end());

    std::ostringstream out;
    out << "device,backend,scheme";
    for (int t : threads) out << ",gflops_t" << t;
    out << ",tok_per_s,ttlm_s,ttft_s,tpot_s,mbu,perplexity\n";
    for (const MetricsReport& m : doc.aggregates) {
        out << m.device << ',' << m.backend << ',' << scheme_name(m.scheme);
        for (int t : threads) {
            auto it = m.flops_by_threads.find(t);
            out << ',' << (it != m.flops_by_threads.end() ? detail::fmt_fixed(it->second, 3) : "-");
        }
        out << ',' << detail::fmt_opt(m.throughput, 3);
        out << ',' << detail::fmt_fixed(m.ttlm, 6);
        out << ',' << detail::fmt_fixed(m.ttft, 6);
        out << ',' << detail::fmt_opt(m.tpot, 6);
        out << ',' << detail::fmt_opt(m.mbu, 4);
        out << ',' << detail::fmt_opt(m.perplexity, 4);
        out << '\n';
    }
    return out.str();
}

/// Fixed-width comparison table, rows grouped by scheme in the canonical
/// q4_0, q4_1, q5_0, q5_1, q8_0 order regardless of config order.
inline std::string render_table(const ReportDocument& doc) {
    std::vector<MetricsReport> rows = doc.aggregates;
    std::stable_sort(rows.begin(), rows.end(), [](const MetricsReport& a, const MetricsReport& b) {
        return detail::scheme_rank(a.scheme) < detail::scheme_rank(b.scheme);
    });

    const std::vector<std::string> header = {"Platform", "Backend",  "Scheme", "GFLOPS(t4)",
                                             "GFLOPS(t8)", "Tok/S",  "TTLM",   "TTFT",
                                             "MBU",        "PPL"};
    std::vector<std::vector<std::string>> cells;
    for (const MetricsReport& m : rows) {
        auto gflops_at = [&](int t) -> std::string {
            auto it = m.flops_by_threads.find(t);
            return it != m.flops_by_threads.end() ? detail::fmt_fixed(it->second, 2) : "-";
        };
        cells.push_back({m.device, m.backend, scheme_name(m.scheme), gflops_at(4), gflops_at(8),
                         detail::fmt_opt(m.throughput, 2), detail::fmt_fixed(m.ttlm, 3),
                         detail::fmt_fixed(m.ttft, 3), detail::fmt_opt(m.mbu, 3),
                         detail::fmt_opt(m.perplexity, 2)});
        if (m.mbu_over_peak) cells.back()[8] += "!";  // check peak bandwidth
    }

    std::vector<size_t> widths(header.size());
    for (size_t c = 0; c < header.size(); ++c) widths[c] = header[c].size();
    for (const auto& row : cells) {
        for (size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
    }
    std::ostringstream out;
    auto emit_row = [&](const std::vector<std::string>& row) {
        for (size_t c = 0; c < row.size(); ++c) {
            out << (c ? " | " : "") << std::left << std::setw(static_cast<int>(widths[c])) << row[c];
        }
        out << '\n';
    };
    emit_row(header);
    size_t total = 0;
    for (size_t c = 0; c < widths.size(); ++c) total += widths[c] + (c ? 3 : 0);
    out << std::string(total, '-') << '\n';
    for (const auto& row : cells) emit_row(row);
    return out.str();
}

inline void emit_report(const ReportDocument& doc, const std::string& path,
                        const std::string& format) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write report: " + path);
    if (format == "json") {
        f << to_json(doc).dump(2) << '\n';
    } else if (format == "csv") {
        f << to_csv(doc);
    } else if (format == "table") {
        f << render_table(doc);
    } else {
        throw ConfigError("unknown report format: " + format);
    }
    if (!f) throw IoError("write failed: " + path);
}

/// Compare two reports on everything except wall-clock derived fields.
/// Used by the determinism checks.
inline bool equal_non_timing(const ReportDocument& a, const ReportDocument& b,
                             std::string* diff = nullptr) {
    auto fail = [&](const std::string& what) {
        if (diff) *diff = what;
        return false;
    };
    if (to_json(a.config) != to_json(b.config)) return fail("config");
    if (a.outcomes.size() != b.outcomes.size()) return fail("outcome count");
    for (size_t i = 0; i < a.outcomes.size(); ++i) {
        const RunOutcome& x = a.outcomes[i];
        const RunOutcome& y = b.outcomes[i];
        const std::string tag = std::string("outcome ") + scheme_name(x.scheme) +
                                "#" + std::to_string(x.iteration);
        if (x.scheme != y.scheme || x.iteration != y.iteration) return fail(tag + " identity");
        if (x.status != y.status || x.reason != y.reason) return fail(tag + " status");
        if (x.metrics.has_value() != y.metrics.has_value()) return fail(tag + " metrics presence");
        if (x.metrics) {
            const MetricsReport& mx = *x.metrics;
            const MetricsReport& my = *y.metrics;
            if (mx.tokens != my.tokens) return fail(tag + " tokens");
            if (mx.flop_count != my.flop_count) return fail(tag + " flop_count");
            if (mx.param_bytes != my.param_bytes) return fail(tag + " param_bytes");
            if (mx.kv_bytes != my.kv_bytes) return fail(tag + " kv_bytes");
            if (mx.perplexity.has_value() != my.perplexity.has_value()) {
                return fail(tag + " perplexity presence");
            }
            if (mx.perplexity && *mx.perplexity != *my.perplexity) return fail(tag + " perplexity");
        }
    }
    return true;
}

}  // namespace elib
