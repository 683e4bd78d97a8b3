#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "elib/error.hpp"

namespace elib {

struct GenerationParams {
    int max_new_tokens = 16;
    double temperature = 0.0;
    int top_k = 40;
    double top_p = 0.95;
    int repeat_last_n = 64;
    double repeat_penalty = 1.1;
    uint64_t seed = 42;

    void validate(size_t vocab_size) const {
        if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
        if (temperature < 0.0) throw ConfigError("temperature must be >= 0");
        if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must be in (0, 1]");
        if (repeat_penalty < 1.0) throw ConfigError("repeat_penalty must be >= 1");
        if (top_k > static_cast<int>(vocab_size)) throw ConfigError("top_k exceeds vocab size");
    }
};

namespace detail {

inline double rng_uniform01(std::mt19937_64& rng) {
    // fixed mapping from raw bits, identical on every platform
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace detail

/// Pick the next token. Repeat penalty always applies to tokens seen in the
/// recent window; temperature 0 or top_k 1 short-circuits to argmax with
/// lowest-id tie-breaking.
inline int sample(std::span<const float> logits, std::span<const int> recent_tokens,
                  const GenerationParams& params, std::mt19937_64& rng) {
    const size_t vocab = logits.size();
    std::vector<float> adjusted(logits.begin(), logits.end());

    if (params.repeat_penalty > 1.0 && params.repeat_last_n > 0) {
        const size_t window = std::min<size_t>(recent_tokens.size(),
                                               static_cast<size_t>(params.repeat_last_n));
        const float penalty = static_cast<float>(params.repeat_penalty);
        for (size_t i = recent_tokens.size() - window; i < recent_tokens.size(); ++i) {
            const int id = recent_tokens[i];
            if (id < 0 || static_cast<size_t>(id) >= vocab) continue;
            if (adjusted[id] > 0.0f) {
                adjusted[id] /= penalty;
            } else {
                adjusted[id] *= penalty;
            }
        }
    }

    if (params.temperature == 0.0 || params.top_k == 1) {
        size_t best = 0;
        for (size_t i = 1; i < vocab; ++i) {
            if (adjusted[i] > adjusted[best]) best = i;  // ties keep the lowest id
        }
        return static_cast<int>(best);
    }

    std::vector<int> candidates(vocab);
    for (size_t i = 0; i < vocab; ++i) candidates[i] = static_cast<int>(i);
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](int a, int b) { return adjusted[a] > adjusted[b]; });

    size_t keep = vocab;
    if (params.top_k > 0 && static_cast<size_t>(params.top_k) < keep) {
        keep = static_cast<size_t>(params.top_k);
    }

    // nucleus truncation over the (untempered) candidate probabilities
    if (params.top_p < 1.0) {
        double maxl = adjusted[candidates[0]];
        double denom = 0.0;
        for (size_t i = 0; i < keep; ++i) denom += std::exp(adjusted[candidates[i]] - maxl);
        double cum = 0.0;
        size_t kept = keep;
        for (size_t i = 0; i < keep; ++i) {
            cum += std::exp(adjusted[candidates[i]] - maxl) / denom;
            if (cum >= params.top_p) {
                kept = i + 1;
                break;
            }
        }
        keep = std::max<size_t>(1, kept);
    }

    double maxl = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < keep; ++i) {
        maxl = std::max(maxl, static_cast<double>(adjusted[candidates[i]]));
    }
    if (!std::isfinite(maxl)) throw SamplingError("no finite logits left after truncation");

    std::vector<double> weights(keep);
    double total = 0.0;
    for (size_t i = 0; i < keep; ++i) {
        weights[i] = std::exp((adjusted[candidates[i]] - maxl) / params.temperature);
        total += weights[i];
    }
    if (!(total > 0.0)) throw SamplingError("degenerate sampling distribution");

    const double u = detail::rng_uniform01(rng) * total;
    double acc = 0.0;
    for (size_t i = 0; i < keep; ++i) {
        acc += weights[i];
        if (u < acc) return candidates[i];
    }
    return candidates[keep - 1];
}

}  // namespace elib
