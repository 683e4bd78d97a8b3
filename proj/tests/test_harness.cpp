#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include <doctest.h>

#include "elib/harness.hpp"

using namespace elib;
namespace fs = std::filesystem;

namespace {

struct BenchFixture {
    std::string model_path;
    BenchConfig cfg;

    BenchFixture() {
        model_path = (fs::temp_directory_path() / "elib_harness_tiny.elib").string();
        write_model(generate_model(tiny_spec(), 42), model_path);
        cfg.original_model = model_path;
        cfg.schemes = {Scheme::Q4_0, Scheme::Q8_0};
        cfg.bench.iteration = 2;
        cfg.bench.max_new_tokens = 6;
        cfg.bench.flops_dim = 64;
        cfg.bench.flops_reps = 3;
        cfg.bench.kv_capacity = 64;
        cfg.bench.timeout_seconds = 60.0;
        cfg.dev.profile = "macbook_m2";
        cfg.dev.device = device_preset("macbook_m2");
        cfg.dev.thread_counts = {1, 2};
        cfg.dev.device.thread_counts = cfg.dev.thread_counts;
    }
    ~BenchFixture() {
        std::remove(model_path.c_str());
        for (Scheme s : kQuantSchemes) {
            std::remove((model_path + "." + scheme_name(s) + ".elib").c_str());
        }
        unsetenv("ELIB_FAIL_INJECT");
    }
};

}  // namespace

TEST_CASE("failure injection parsing") {
    const auto inj = parse_injections("q5_0:1:timeout, q4_0:2:memory_overflow,q8_0:3:deadlock");
    REQUIRE(inj.size() == 3);
    CHECK(inj[0].scheme == Scheme::Q5_0);
    CHECK(inj[0].iteration == 1);
    CHECK(inj[0].reason == SkipReason::timeout);
    CHECK(inj[1].reason == SkipReason::memory_overflow);
    CHECK(inj[2].reason == SkipReason::deadlock);
    CHECK_THROWS_AS(parse_injections("q4_0:timeout"), ConfigError);
    CHECK_THROWS_AS(parse_injections("q4_0:1:spurious"), ConfigError);
    CHECK(parse_injections("").empty());
}

TEST_CASE("watchdog fires on total overrun") {
    CancelToken token;
    detail::Watchdog watchdog(token, 0.02);
    std::this_thread::sleep_for(std::chrono::milliseconds(80));
    CHECK(token.reason.load() == static_cast<int>(SkipReason::timeout));
}

TEST_CASE("watchdog stays quiet while progress is fresh") {
    CancelToken token;
    detail::Watchdog watchdog(token, 0.5);
    for (int i = 0; i < 10; ++i) {
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
        token.progress();
    }
    CHECK(token.reason.load() == 0);
}

TEST_CASE("adapt_and_deploy applies the memory budget") {
    BenchFixture fx;
    auto dep = adapt_and_deploy(fx.model_path, fx.cfg);
    REQUIRE(dep.has_value());
    CHECK(dep->kv_capacity == 64);
    CHECK(dep->kv_bytes == kv_cache_size(tiny_spec(), 1, 64, 4));
    CHECK(dep->t_load >= 0.0);

    fx.cfg.bench.memory_limit_bytes = 1;  // nothing fits
    CHECK_FALSE(adapt_and_deploy(fx.model_path, fx.cfg).has_value());
}

TEST_CASE("run_benchmark produces one outcome per scheme and iteration") {
    BenchFixture fx;
    const ReportDocument doc = run_benchmark(fx.cfg);
    REQUIRE(doc.outcomes.size() == 4);  // 2 schemes x 2 iterations
    for (const RunOutcome& o : doc.outcomes) {
        CHECK(o.status == "ok");
        REQUIRE(o.metrics.has_value());
        CHECK_FALSE(o.metrics->tokens.empty());
        CHECK(o.metrics->flop_count > 0);
        CHECK(o.metrics->flops_by_threads.size() == 2);
    }
    // quantized siblings were cached next to the source model
    CHECK(fs::exists(fx.model_path + ".q4_0.elib"));
    CHECK(fs::exists(fx.model_path + ".q8_0.elib"));

    REQUIRE(doc.aggregates.size() == 2);
    for (const MetricsReport& agg : doc.aggregates) {
        CHECK(agg.tokens.empty());
        if (agg.throughput) {
            CHECK(*agg.tpot * *agg.throughput == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("injected failures skip exactly the targeted cell") {
    BenchFixture fx;
    const ReportDocument clean = run_benchmark(fx.cfg);

    for (const char* reason : {"timeout", "memory_overflow", "deadlock"}) {
        const std::string spec = std::string("q8_0:2:") + reason;
        setenv("ELIB_FAIL_INJECT", spec.c_str(), 1);
        const ReportDocument doc = run_benchmark(fx.cfg);
        unsetenv("ELIB_FAIL_INJECT");
        REQUIRE(doc.outcomes.size() == 4);

        int skipped = 0;
        for (size_t i = 0; i < doc.outcomes.size(); ++i) {
            const RunOutcome& o = doc.outcomes[i];
            if (o.scheme == Scheme::Q8_0 && o.iteration == 2) {
                CHECK(o.status == "skipped");
                CHECK(o.reason == reason);
                CHECK_FALSE(o.metrics.has_value());
                ++skipped;
            } else {
                CHECK(o.status == "ok");
                // the untouched cells match the clean run on non-timing fields
                const RunOutcome& ref = clean.outcomes[i];
                CHECK(o.metrics->tokens == ref.metrics->tokens);
                CHECK(o.metrics->flop_count == ref.metrics->flop_count);
                CHECK(o.metrics->param_bytes == ref.metrics->param_bytes);
                CHECK(o.metrics->kv_bytes == ref.metrics->kv_bytes);
            }
        }
        CHECK(skipped == 1);
    }
}

TEST_CASE("models that cannot fit are skipped as memory overflow") {
    BenchFixture fx;
    fx.cfg.bench.memory_limit_bytes = 1;
    const ReportDocument doc = run_benchmark(fx.cfg);
    REQUIRE(doc.outcomes.size() == 4);
    for (const RunOutcome& o : doc.outcomes) {
        CHECK(o.status == "skipped");
        CHECK(o.reason == "memory_overflow");
    }
    CHECK(doc.aggregates.empty());
}

TEST_CASE("benchmark runs are deterministic on non-timing fields") {
    BenchFixture fx;
    const ReportDocument a = run_benchmark(fx.cfg);
    const ReportDocument b = run_benchmark(fx.cfg);
    std::string diff;
    CHECK_MESSAGE(equal_non_timing(a, b, &diff), diff);
}

TEST_CASE("benchmark honours a corpus when configured") {
    BenchFixture fx;
    const std::string corpus_path = (fs::temp_directory_path() / "elib_harness_corpus.txt").string();
    {
        std::ofstream f(corpus_path, std::ios::binary);
        for (int i = 0; i < 8; ++i) f << "all work and no play makes a dull benchmark. ";
    }
    fx.cfg.corpus = corpus_path;
    fx.cfg.bench.context_len = 16;
    fx.cfg.bench.stride = 16;
    fx.cfg.bench.iteration = 1;
    const ReportDocument doc = run_benchmark(fx.cfg);
    std::remove(corpus_path.c_str());
    for (const RunOutcome& o : doc.outcomes) {
        REQUIRE(o.metrics.has_value());
        REQUIRE(o.metrics->perplexity.has_value());
        CHECK(std::isfinite(*o.metrics->perplexity));
        CHECK(*o.metrics->perplexity > 1.0);
    }
}
