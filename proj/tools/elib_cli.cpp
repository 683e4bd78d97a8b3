// ELIB command line: each pipeline stage is independently drivable.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "elib/config.hpp"
#include "elib/harness.hpp"
#include "elib/metrics.hpp"
#include "elib/model.hpp"
#include "elib/report.hpp"

namespace fs = std::filesystem;
using namespace elib;

int main(int argc, char** argv) {
    CLI::App app{"ELIB: edge LLM inference benchmarking"};
    app.require_subcommand(1);

    // gen-model
    auto* gen = app.add_subcommand("gen-model", "emit a seeded tiny model container");
    std::string gen_preset = "tiny";
    uint64_t gen_seed = 42;
    std::string gen_out;
    gen->add_option("--preset", gen_preset, "model preset (tiny)");
    gen->add_option("--seed", gen_seed, "weight RNG seed");
    gen->add_option("--out", gen_out, "output model path")->required();

    // quantize
    auto* quant = app.add_subcommand("quantize", "re-encode a model under one scheme");
    std::string q_model, q_scheme, q_out;
    quant->add_option("--model", q_model, "source model (f32)")->required();
    quant->add_option("--scheme", q_scheme, "target scheme tag (q4_0 ... q8_0, f16, f32)")->required();
    quant->add_option("--out", q_out, "output model path")->required();

    // bench
    auto* bench = app.add_subcommand("bench", "run the full benchmark sweep");
    std::string b_config, b_out_dir = ".", b_format = "json";
    bench->add_option("--config", b_config, "benchmark config file")->required();
    bench->add_option("--out", b_out_dir, "output directory");
    bench->add_option("--format", b_format, "json|csv|table");

    // ppl
    auto* ppl = app.add_subcommand("ppl", "perplexity over a corpus");
    std::string p_model, p_corpus;
    int p_context = 128, p_stride = 0, p_threads = 4;
    ppl->add_option("--model", p_model)->required();
    ppl->add_option("--corpus", p_corpus)->required();
    ppl->add_option("--context", p_context, "window length in tokens");
    ppl->add_option("--stride", p_stride, "window stride (default: context)");
    ppl->add_option("--threads", p_threads);

    // flops
    auto* fl = app.add_subcommand("flops", "matmul GFLOPS microbenchmark");
    std::vector<int> f_threads{4, 8};
    int f_dim = 256, f_reps = 5;
    fl->add_option("--threads", f_threads, "thread counts to sweep");
    fl->add_option("--dim", f_dim, "square matrix dimension");
    fl->add_option("--reps", f_reps, "repetitions (median timing)");

    // report
    auto* rep = app.add_subcommand("report", "re-render a saved json report");
    std::string r_in, r_format = "table";
    rep->add_option("--in", r_in, "saved report.json")->required();
    rep->add_option("--format", r_format, "table|csv|json");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            if (gen_preset != "tiny") {
                throw ConfigError("unknown preset: " + gen_preset);
            }
            const Model m = generate_model(tiny_spec(), gen_seed);
            write_model(m, gen_out);
            std::cout << "wrote " << gen_out << " (" << m.param_bytes << " param bytes, seed "
                      << gen_seed << ")\n";
        } else if (*quant) {
            const Model src = load_model(q_model).first;
            const Scheme scheme = scheme_from_name(q_scheme);
            const Model out = quantize_model(src, scheme);
            write_model(out, q_out);
            std::cout << "wrote " << q_out << ": " << out.param_bytes << " bytes total, "
                      << out.quantized_payload_bytes() << " quantized payload bytes\n";
        } else if (*bench) {
            const BenchConfig cfg = parse_config(b_config);
            const ReportDocument doc = run_benchmark(cfg);
            fs::create_directories(b_out_dir);
            const std::string json_path = (fs::path(b_out_dir) / "report.json").string();
            emit_report(doc, json_path, "json");
            if (b_format == "csv") {
                emit_report(doc, (fs::path(b_out_dir) / "report.csv").string(), "csv");
            }
            std::cout << render_table(doc);
            int skipped = 0;
            for (const auto& o : doc.outcomes) skipped += o.status == "skipped";
            std::cout << doc.outcomes.size() << " outcomes (" << skipped << " skipped), report at "
                      << json_path << "\n";
        } else if (*ppl) {
            const Model m = load_model(p_model).first;
            if (p_stride <= 0) p_stride = p_context;
            const EvalCorpus corpus = load_corpus(p_corpus, p_context, p_stride);
            const ExecPlan plan{Backend::threaded, p_threads};
            std::cout << "perplexity = " << perplexity(m, corpus, plan) << " ("
                      << corpus.windows.size() << " windows, context " << p_context << ", stride "
                      << p_stride << ")\n";
        } else if (*fl) {
            for (int t : f_threads) {
                const ExecPlan plan{Backend::threaded, t};
                std::cout << "threads=" << t << "  gflops="
                          << flops_microbench(plan, f_dim, f_reps) << "\n";
            }
        } else if (*rep) {
            std::ifstream f(r_in);
            if (!f) throw IoError("cannot open report: " + r_in);
            const ReportDocument doc = report_from_json(json::parse(f));
            if (r_format == "table") {
                std::cout << render_table(doc);
            } else if (r_format == "csv") {
                std::cout << to_csv(doc);
            } else if (r_format == "json") {
                std::cout << to_json(doc).dump(2) << "\n";
            } else {
                throw ConfigError("unknown format: " + r_format);
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
