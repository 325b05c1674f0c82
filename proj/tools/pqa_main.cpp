// pqa: fit, evaluate, quantize and simulate product-quantized layers.
//
// Exit codes: 0 success, 1 usage error, 2 data/shape/file error, 3 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "pqa/errors.hpp"
#include "pqa/pipeline.hpp"

namespace fs = std::filesystem;
using namespace pqa;

namespace {

// Every RunConfig field has a flag. Values only apply when the flag was given.
struct RunFlags {
    std::string config_path;
    std::uint64_t seed = 0;
    std::size_t l_s = 0, n_p = 0;
    std::string metric;
    std::string memory;
    double bandwidth = 0.0;
    double fmax = 0.0;
    std::size_t ls_vec = 0, np_vec = 0, ns_vec = 0, nout_vec = 0;
    std::size_t ls_max = 0, np_max = 0, ns_max = 0, nout_max = 0, nin_max = 0;
    unsigned hw_proto_bits = 0, hw_lut_bits = 0;
    std::string granularity, calibration;
    double lo_pct = 0, hi_pct = 0;
    unsigned q_proto_bits = 0, q_lut_bits = 0;
    bool quant = false;
    std::size_t max_iters = 0, max_columns = 0;
    double ridge = 0.0;
    std::size_t corrector_hidden = 0, corrector_epochs = 0;
    double corrector_lr = 0.0;
    double baseline = 0.0;
    std::string out;

    std::map<std::string, CLI::Option*> opts;

    void attach(CLI::App* app) {
        opts["config"] = app->add_option("--config", config_path, "JSON run configuration");
        opts["seed"] = app->add_option("--seed", seed, "random seed");
        opts["l_s"] = app->add_option("--l-s", l_s, "prototype length for PQ layers without their own setting");
        opts["n_p"] = app->add_option("--n-p", n_p, "prototypes per subspace");
        opts["metric"] = app->add_option("--metric", metric, "l2_squared or l1");
        opts["memory"] = app->add_option("--memory", memory, "ddr4, hbm or custom");
        opts["bandwidth"] = app->add_option("--bandwidth", bandwidth, "bytes/s for --memory custom");
        opts["fmax"] = app->add_option("--fmax", fmax, "clock frequency in Hz");
        opts["ls_vec"] = app->add_option("--ls-vec", ls_vec);
        opts["np_vec"] = app->add_option("--np-vec", np_vec);
        opts["ns_vec"] = app->add_option("--ns-vec", ns_vec);
        opts["nout_vec"] = app->add_option("--nout-vec", nout_vec);
        opts["ls_max"] = app->add_option("--ls-max", ls_max);
        opts["np_max"] = app->add_option("--np-max", np_max);
        opts["ns_max"] = app->add_option("--ns-max", ns_max);
        opts["nout_max"] = app->add_option("--nout-max", nout_max);
        opts["nin_max"] = app->add_option("--nin-max", nin_max);
        opts["hw_proto_bits"] = app->add_option("--hw-proto-bits", hw_proto_bits, "prototype bits streamed from memory");
        opts["hw_lut_bits"] = app->add_option("--hw-lut-bits", hw_lut_bits, "table bits streamed from memory");
        opts["quant"] = app->add_flag("--quant", quant, "enable post-training quantization");
        opts["granularity"] = app->add_option("--granularity", granularity, "global, per_layer or per_subspace");
        opts["calibration"] = app->add_option("--calibration", calibration, "full_range or percentile");
        opts["lo_pct"] = app->add_option("--lo-pct", lo_pct);
        opts["hi_pct"] = app->add_option("--hi-pct", hi_pct);
        opts["q_proto_bits"] = app->add_option("--proto-bits", q_proto_bits, "prototype/input code width");
        opts["q_lut_bits"] = app->add_option("--lut-bits", q_lut_bits, "table code width");
        opts["max_iters"] = app->add_option("--max-iters", max_iters, "k-means iterations");
        opts["max_columns"] = app->add_option("--max-columns", max_columns, "fitting columns per layer (0 = all)");
        opts["ridge"] = app->add_option("--ridge", ridge, "refit tables by ridge regression with this penalty");
        opts["corrector_hidden"] = app->add_option("--corrector-hidden", corrector_hidden, "corrector width (0 = none)");
        opts["corrector_epochs"] = app->add_option("--corrector-epochs", corrector_epochs);
        opts["corrector_lr"] = app->add_option("--corrector-lr", corrector_lr);
        opts["baseline"] = app->add_option("--baseline-cycles", baseline, "reference cycle count for speedup");
        opts["out"] = app->add_option("--out", out, "output directory");
    }

    bool given(const std::string& key) const {
        const auto it = opts.find(key);
        return it != opts.end() && it->second->count() > 0;
    }

    RunConfig resolve() const {
        RunConfig cfg;
        if (given("config")) cfg = parse_run_config(read_text_file(config_path), cfg, config_path);
        if (given("seed")) cfg.seed = seed;
        if (given("l_s") || given("n_p") || given("metric")) {
            PQConfig pq = cfg.pq.value_or(PQConfig{});
            if (given("l_s")) pq.l_s = l_s;
            if (given("n_p")) pq.n_p = n_p;
            if (given("metric")) pq.metric = parse_metric(metric);
            cfg.pq = pq;
        }
        if (given("memory")) {
            const auto kind = parse_memory_kind(memory);
            cfg.memory = memory_spec(kind, kind == MemoryKind::custom ? bandwidth : 0.0);
        } else if (given("bandwidth")) {
            cfg.memory = memory_spec(MemoryKind::custom, bandwidth);
        }
        if (given("fmax")) cfg.hw.fmax_hz = fmax;
        if (given("ls_vec")) cfg.hw.ls_vec = ls_vec;
        if (given("np_vec")) cfg.hw.np_vec = np_vec;
        if (given("ns_vec")) cfg.hw.ns_vec = ns_vec;
        if (given("nout_vec")) cfg.hw.nout_vec = nout_vec;
        if (given("ls_max")) cfg.hw.ls_max = ls_max;
        if (given("np_max")) cfg.hw.np_max = np_max;
        if (given("ns_max")) cfg.hw.ns_max = ns_max;
        if (given("nout_max")) cfg.hw.nout_max = nout_max;
        if (given("nin_max")) cfg.hw.nin_max = nin_max;
        if (given("hw_proto_bits")) cfg.hw.proto_bits = hw_proto_bits;
        if (given("hw_lut_bits")) cfg.hw.lut_bits = hw_lut_bits;
        const bool any_quant = quant || given("granularity") || given("calibration") || given("lo_pct") ||
                               given("hi_pct") || given("q_proto_bits") || given("q_lut_bits");
        if (any_quant) {
            QuantScheme q = cfg.quant.value_or(QuantScheme{});
            if (given("granularity")) q.granularity = parse_granularity(granularity);
            if (given("calibration")) q.calibration.kind = parse_calibration(calibration);
            if (given("lo_pct")) q.calibration.lo_pct = lo_pct;
            if (given("hi_pct")) q.calibration.hi_pct = hi_pct;
            if (given("q_proto_bits")) q.proto_bits = q_proto_bits;
            if (given("q_lut_bits")) q.lut_bits = q_lut_bits;
            cfg.quant = q;
        }
        if (given("max_iters")) cfg.fit.max_iters = max_iters;
        if (given("max_columns")) cfg.fit.max_columns = max_columns;
        if (given("ridge")) cfg.fit.ridge = ridge;
        if (given("corrector_hidden")) cfg.fit.corrector_hidden = corrector_hidden;
        if (given("corrector_epochs")) cfg.fit.corrector_epochs = corrector_epochs;
        if (given("corrector_lr")) cfg.fit.corrector_lr = corrector_lr;
        if (given("baseline")) cfg.baseline_cycles = baseline;
        if (given("out")) cfg.out_dir = out;
        if (cfg.quant) validate(*cfg.quant);
        return cfg;
    }
};

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(dir.string() + ": cannot create directory (" + ec.message() + ")");
}

void print_warnings(const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

int run(int argc, char** argv) {
    CLI::App app{"Product-quantization inference and accelerator modeling"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "pqa 0.1.0");

    RunFlags fit_flags, eval_flags, sim_flags, quant_flags;
    std::string fit_model, fit_samples, fit_weights;
    auto* fit = app.add_subcommand("fit", "fit prototypes and tables for the PQ layers of a model");
    fit->add_option("--model", fit_model, "zoo name or model JSON")->required();
    fit->add_option("--samples", fit_samples, "[N,C,H,W] sample tensor")->required();
    fit->add_option("--weights", fit_weights, "directory with <layer>.weights.pqt files (random if omitted)");
    fit_flags.attach(fit);

    std::string eval_artifacts, eval_samples;
    auto* eval = app.add_subcommand("eval", "per-layer and end-to-end error of fitted artifacts");
    eval->add_option("--artifacts", eval_artifacts, "directory written by fit")->required();
    eval->add_option("--samples", eval_samples, "[N,C,H,W] input tensor")->required();
    eval_flags.attach(eval);

    std::string quant_artifacts, quant_samples;
    auto* quantize = app.add_subcommand("quantize", "quantize fitted artifacts");
    quantize->add_option("--artifacts", quant_artifacts, "directory written by fit")->required();
    quantize->add_option("--samples", quant_samples, "calibration inputs")->required();
    quant_flags.attach(quantize);

    std::string sim_model;
    auto* simulate = app.add_subcommand("simulate", "cycle, latency and footprint report for a model");
    simulate->add_option("--model", sim_model, "zoo name or model JSON")->required();
    sim_flags.attach(simulate);

    std::string grid_path, baseline_path, sweep_out;
    std::vector<std::string> sweep_memories;
    auto* sweep_cmd = app.add_subcommand("sweep", "speedup grid over layer sizes and PQ parameters");
    sweep_cmd->add_option("--grid", grid_path, "grid JSON (default: the 5x5x5x5 heat-map grid)");
    sweep_cmd->add_option("--baseline", baseline_path, "CSV with in_size,channels,cycles");
    sweep_cmd->add_option("--memory", sweep_memories, "memory kinds to sweep (ddr4, hbm)");
    sweep_cmd->add_option("--out", sweep_out, "CSV output file (stdout if omitted)");

    auto* zoo = app.add_subcommand("zoo", "bundled model descriptions");
    zoo->require_subcommand(1);
    zoo->add_subcommand("list", "list bundled models");
    std::string dump_name, dump_out;
    bool dump_all = false;
    auto* dump = zoo->add_subcommand("dump", "print or write a bundled model as JSON");
    dump->add_option("name", dump_name, "model name");
    dump->add_flag("--all", dump_all, "write every model to --out as <name>.json");
    dump->add_option("--out", dump_out, "output file, or directory with --all");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    if (fit->parsed()) {
        const RunConfig cfg = fit_flags.resolve();
        const Model model = resolve_model(fit_model);
        const auto samples = load_samples(fit_samples);
        std::optional<std::vector<LayerWeights>> weights;
        if (!fit_weights.empty()) {
            std::vector<LayerWeights> ws;
            for (const auto& layer : model.layers) {
                const auto stem = artifact_stem(layer.spec.name);
                const auto dims = derive_unrolled_dims(layer.spec);
                const fs::path wp = fs::path(fit_weights) / (stem + ".weights.pqt");
                const auto t = read_tensor(wp);
                if (t.dims != std::vector<std::uint32_t>{static_cast<std::uint32_t>(layer.spec.c_out),
                                                         static_cast<std::uint32_t>(dims.a)}) {
                    throw ShapeError(wp.string() + ": weights do not match layer '" + layer.spec.name + "'");
                }
                LayerWeights lw{Matrix(layer.spec.c_out, dims.a, tensor_values(t)), {}};
                const fs::path bp = fs::path(fit_weights) / (stem + ".bias.pqt");
                if (fs::exists(bp)) lw.bias = tensor_values(read_tensor(bp));
                ws.push_back(std::move(lw));
            }
            weights = std::move(ws);
        }
        const auto outcome = cmd_fit(model, samples, cfg, weights);
        print_warnings(outcome.warnings);
        std::cout << fit_report_csv(outcome.layers);
        std::cerr << outcome.written.size() << " files written to " << cfg.out_dir << '\n';
        return 0;
    }
    if (eval->parsed()) {
        const RunConfig cfg = eval_flags.resolve();
        const auto artifacts = load_artifacts(eval_artifacts);
        const auto report = cmd_eval(artifacts, load_samples(eval_samples), cfg.quant);
        const std::string csv = eval_report_csv(report);
        if (eval_flags.given("out") || eval_flags.given("config")) {
            ensure_dir(cfg.out_dir);
            write_text_file(fs::path(cfg.out_dir) / "eval_report.csv", csv);
        }
        std::cout << csv;
        return 0;
    }
    if (quantize->parsed()) {
        RunConfig cfg = quant_flags.resolve();
        if (!cfg.quant) cfg.quant = QuantScheme{};
        const auto artifacts = load_artifacts(quant_artifacts);
        const auto quantized = quantize_artifacts(artifacts, load_samples(quant_samples), *cfg.quant);
        ensure_dir(cfg.out_dir);
        save_quantized(cfg.out_dir, quantized);
        std::cout << "layer,lookup_error_bound,acc_lsb\n";
        for (const auto& q : quantized) {
            std::cout << q.layer_name << ',' << format_real(q.lookup_error_bound()) << ',' << format_real(q.acc_lsb)
                      << '\n';
        }
        return 0;
    }
    if (simulate->parsed()) {
        const RunConfig cfg = sim_flags.resolve();
        const Model model = resolve_model(sim_model);
        const auto report = cmd_simulate(model, cfg);
        const std::string csv = simulate_csv(model, report);
        const std::string summary = simulate_summary(model, report);
        if (sim_flags.given("out") || sim_flags.given("config")) {
            ensure_dir(cfg.out_dir);
            write_text_file(fs::path(cfg.out_dir) / "simulate.csv", csv);
            write_text_file(fs::path(cfg.out_dir) / "summary.txt", summary);
        }
        std::cout << csv << '\n' << summary;
        return 0;
    }
    if (sweep_cmd->parsed()) {
        SweepGrid grid = grid_path.empty() ? heatmap_grid() : parse_sweep_grid(read_text_file(grid_path), grid_path);
        if (!baseline_path.empty()) grid.baseline = parse_baseline_csv(read_text_file(baseline_path), baseline_path);
        if (!sweep_memories.empty()) {
            grid.memories.clear();
            for (const auto& m : sweep_memories) grid.memories.push_back(memory_spec(parse_memory_kind(m)));
        }
        const std::string csv = cmd_sweep(grid);
        if (sweep_out.empty()) {
            std::cout << csv;
        } else {
            const fs::path p = sweep_out;
            if (p.has_parent_path()) ensure_dir(p.parent_path());
            write_text_file(p, csv);
        }
        return 0;
    }
    if (zoo->parsed()) {
        if (dump->parsed()) {
            if (dump_all) {
                if (dump_out.empty()) throw ArgumentError("zoo dump --all needs --out DIR");
                ensure_dir(dump_out);
                for (const auto& n : zoo_names()) write_text_file(fs::path(dump_out) / (n + ".json"), model_to_json(zoo_model(n)));
                return 0;
            }
            if (dump_name.empty()) throw ArgumentError("zoo dump needs a model name or --all");
            const std::string text = model_to_json(zoo_model(dump_name));
            if (dump_out.empty()) std::cout << text;
            else write_text_file(dump_out, text);
            return 0;
        }
        for (const auto& n : zoo_names()) {
            const Model m = zoo_model(n);
            std::size_t pq = 0;
            for (const auto& l : m.layers) pq += l.spec.pq_enabled;
            std::cout << n << ": " << m.layers.size() << " layers, " << pq << " PQ-enabled, "
                      << dense_parameters(m) << " dense parameters, " << dense_model_flops(m) << " FLOPs\n";
        }
        return 0;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ArgumentError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 3;
    } catch (const ShapeError& e) {
        std::cerr << "shape error: " << e.what() << '\n';
        return 2;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
