#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <type_traits>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "elib/error.hpp"
#include "elib/metrics.hpp"
#include "elib/quant.hpp"

namespace elib {

struct BenchmarkParams {
    int iteration = 3;
    int batch = 1;
    int max_new_tokens = 32;
    int top_k = 40;
    double top_p = 0.95;
    int repeat_last_n = 64;
    double repeat_penalty = 1.1;
    double temperature = 0.0;
    uint64_t seed = 42;
    int context_len = 128;
    int stride = 128;
    double timeout_seconds = 300.0;
    uint64_t memory_limit_bytes = 0;  // 0 = no extra budget beyond device RAM
    int flops_dim = 64;
    int flops_reps = 3;
    uint32_t kv_capacity = 0;  // 0 = model max_seq
    uint32_t databyte = 4;

    bool operator==(const BenchmarkParams&) const = default;
};

struct DeviceParams {
    std::string profile;  // preset name, empty when inline fields are given
    DeviceProfile device;
    std::vector<int> thread_counts{4, 8};
    std::string backend = "threaded";

    bool operator==(const DeviceParams&) const = default;
};

struct BenchConfig {
    std::string original_model;
    std::vector<Scheme> schemes;
    std::string prompt_data;
    std::string corpus;
    BenchmarkParams bench;
    DeviceParams dev;

    bool operator==(const BenchConfig&) const = default;
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <class T>
T parse_number(const std::string& value, const std::string& key) {
    if constexpr (std::is_floating_point_v<T>) {
        try {
            size_t used = 0;
            const double v = std::stod(value, &used);
            if (used != value.size()) throw std::invalid_argument(value);
            return static_cast<T>(v);
        } catch (const std::exception&) {
            throw ConfigError("malformed value for '" + key + "': " + value);
        }
    } else {
        T v{};
        // integer keys accept scientific shorthand like 5e10 for byte sizes
        auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
        if (ec == std::errc{} && p == value.data() + value.size()) return v;
        try {
            size_t used = 0;
            const double d = std::stod(value, &used);
            if (used != value.size() || d < 0 || d != std::floor(d)) {
                throw std::invalid_argument(value);
            }
            return static_cast<T>(d);
        } catch (const std::exception&) {
            throw ConfigError("malformed value for '" + key + "': " + value);
        }
    }
}

}  // namespace detail

inline void validate_config(const BenchConfig& cfg) {
    if (cfg.original_model.empty()) {
        throw ConfigError("missing required field: original_model");
    }
    if (cfg.bench.iteration < 1) throw ConfigError("iteration must be >= 1");
    if (cfg.bench.batch < 1) throw ConfigError("batch must be >= 1");
    if (cfg.bench.max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
    if (!(cfg.bench.top_p > 0.0 && cfg.bench.top_p <= 1.0)) {
        throw ConfigError("top_p must be in (0, 1]");
    }
    if (cfg.bench.temperature < 0.0) throw ConfigError("temperature must be >= 0");
    if (cfg.bench.repeat_penalty < 1.0) throw ConfigError("repeat_penalty must be >= 1");
    if (cfg.bench.context_len < 2) throw ConfigError("context_len must be >= 2");
    if (cfg.bench.stride < 1 || cfg.bench.stride > cfg.bench.context_len) {
        throw ConfigError("stride must be in [1, context_len]");
    }
    if (!(cfg.bench.timeout_seconds > 0.0)) throw ConfigError("timeout_seconds must be > 0");
    if (cfg.dev.thread_counts.empty()) throw ConfigError("thread_counts must be non-empty");
    backend_from_name(cfg.dev.backend);
    cfg.dev.device.validate();
}

/// Flat line-oriented key/value config with [benchmark_params] and
/// [device_params] sections. Unknown keys are rejected.
inline BenchConfig parse_config_text(const std::string& text) {
    BenchConfig cfg;
    std::string section;
    bool device_inline = false;
    std::string profile_name;
    DeviceProfile inline_device{"custom", 0.0, 0, {}};

    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = detail::trim(raw);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[' && line.back() == ']') {
            section = detail::trim(line.substr(1, line.size() - 2));
            if (section != "benchmark_params" && section != "device_params") {
                throw ConfigError("unknown section '" + section + "' at line " +
                                  std::to_string(lineno));
            }
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("malformed line " + std::to_string(lineno) + ": " + raw);
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        auto& b = cfg.bench;

        if (section.empty()) {
            if (key == "original_model") cfg.original_model = value;
            else if (key == "schemes") {
                for (const auto& s : detail::split_list(value)) {
                    cfg.schemes.push_back(scheme_from_name(s));
                }
            } else if (key == "prompt_data") cfg.prompt_data = value;
            else if (key == "corpus") cfg.corpus = value;
            else throw ConfigError("unknown key '" + key + "' at line " + std::to_string(lineno));
        } else if (section == "benchmark_params") {
            if (key == "iteration") b.iteration = detail::parse_number<int>(value, key);
            else if (key == "batch") b.batch = detail::parse_number<int>(value, key);
            else if (key == "max_new_tokens") b.max_new_tokens = detail::parse_number<int>(value, key);
            else if (key == "top_k") b.top_k = detail::parse_number<int>(value, key);
            else if (key == "top_p") b.top_p = detail::parse_number<double>(value, key);
            else if (key == "repeat_last_n") b.repeat_last_n = detail::parse_number<int>(value, key);
            else if (key == "repeat_penalty") b.repeat_penalty = detail::parse_number<double>(value, key);
            else if (key == "temperature") b.temperature = detail::parse_number<double>(value, key);
            else if (key == "seed") b.seed = detail::parse_number<uint64_t>(value, key);
            else if (key == "context_len") b.context_len = detail::parse_number<int>(value, key);
            else if (key == "stride") b.stride = detail::parse_number<int>(value, key);
            else if (key == "timeout_seconds") b.timeout_seconds = detail::parse_number<double>(value, key);
            else if (key == "memory_limit_bytes") b.memory_limit_bytes = detail::parse_number<uint64_t>(value, key);
            else if (key == "flops_dim") b.flops_dim = detail::parse_number<int>(value, key);
            else if (key == "flops_reps") b.flops_reps = detail::parse_number<int>(value, key);
            else if (key == "kv_capacity") b.kv_capacity = detail::parse_number<uint32_t>(value, key);
            else if (key == "databyte") b.databyte = detail::parse_number<uint32_t>(value, key);
            else throw ConfigError("unknown key '" + key + "' at line " + std::to_string(lineno));
        } else {  // device_params
            if (key == "profile") profile_name = value;
            else if (key == "name") { inline_device.name = value; device_inline = true; }
            else if (key == "peak_bandwidth") {
                inline_device.peak_bandwidth = detail::parse_number<double>(value, key);
                device_inline = true;
            } else if (key == "ram_bytes") {
                inline_device.ram_bytes = detail::parse_number<uint64_t>(value, key);
                device_inline = true;
            } else if (key == "thread_counts") {
                cfg.dev.thread_counts.clear();
                for (const auto& t : detail::split_list(value)) {
                    cfg.dev.thread_counts.push_back(detail::parse_number<int>(t, key));
                }
            } else if (key == "backend") cfg.dev.backend = value;
            else throw ConfigError("unknown key '" + key + "' at line " + std::to_string(lineno));
        }
    }

    if (!profile_name.empty() && device_inline) {
        throw ConfigError("device_params: give either a profile name or inline fields, not both");
    }
    if (device_inline) {
        cfg.dev.profile = "";
        cfg.dev.device = inline_device;
    } else {
        cfg.dev.profile = profile_name.empty() ? "macbook_m2" : profile_name;
        cfg.dev.device = device_preset(cfg.dev.profile);
    }
    cfg.dev.device.thread_counts = cfg.dev.thread_counts;

    validate_config(cfg);
    return cfg;
}

inline BenchConfig parse_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

}  // namespace elib
