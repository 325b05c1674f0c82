#include "pqa/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "pqa/errors.hpp"

namespace pqa {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw ParseError(where + ": expected an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) throw ParseError(where + ": unknown key '" + it.key() + "'");
    }
}

template <typename T>
void read_count(const json& obj, const char* key, T& out, const std::string& where) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw ParseError(where + ": '" + key + "' must be a non-negative integer");
    }
    out = v.get<T>();
}

void read_real(const json& obj, const char* key, double& out, const std::string& where) {
    if (!obj.contains(key)) return;
    if (!obj.at(key).is_number()) throw ParseError(where + ": '" + key + "' must be a number");
    out = obj.at(key).get<double>();
}

std::string read_string(const json& obj, const char* key, const std::string& where) {
    if (!obj.at(key).is_string()) throw ParseError(where + ": '" + key + "' must be a string");
    return obj.at(key).get<std::string>();
}

json parse_document(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(origin + ": " + e.what());
    }
}

void read_hw(const json& obj, HwConfig& hw, const std::string& where) {
    reject_unknown(obj,
                   {"ls_vec", "np_vec", "ns_vec", "nout_vec", "ls_max", "np_max", "ns_max", "nout_max", "nin_max",
                    "fmax_hz", "proto_bits", "lut_bits"},
                   where);
    read_count(obj, "ls_vec", hw.ls_vec, where);
    read_count(obj, "np_vec", hw.np_vec, where);
    read_count(obj, "ns_vec", hw.ns_vec, where);
    read_count(obj, "nout_vec", hw.nout_vec, where);
    read_count(obj, "ls_max", hw.ls_max, where);
    read_count(obj, "np_max", hw.np_max, where);
    read_count(obj, "ns_max", hw.ns_max, where);
    read_count(obj, "nout_max", hw.nout_max, where);
    read_count(obj, "nin_max", hw.nin_max, where);
    read_real(obj, "fmax_hz", hw.fmax_hz, where);
    read_count(obj, "proto_bits", hw.proto_bits, where);
    read_count(obj, "lut_bits", hw.lut_bits, where);
}

MemorySpec read_memory(const json& v, const std::string& where) {
    if (v.is_string()) return memory_spec(parse_memory_kind(v.get<std::string>()));
    reject_unknown(v, {"kind", "bytes_per_s"}, where);
    if (!v.contains("kind")) throw ParseError(where + ": missing 'kind'");
    const auto kind = parse_memory_kind(read_string(v, "kind", where));
    double bw = 0.0;
    read_real(v, "bytes_per_s", bw, where);
    if (kind != MemoryKind::custom) {
        if (v.contains("bytes_per_s")) throw ParseError(where + ": 'bytes_per_s' is only valid for custom memory");
        return memory_spec(kind);
    }
    try {
        return memory_spec(kind, bw);
    } catch (const ArgumentError& e) {
        throw ParseError(where + ": " + e.what());
    }
}

json memory_json(const MemorySpec& m) {
    if (m.kind != MemoryKind::custom) return std::string(to_string(m.kind));
    return {{"kind", "custom"}, {"bytes_per_s", m.bytes_per_s}};
}

PQConfig read_pq(const json& obj, const std::string& where) {
    reject_unknown(obj, {"l_s", "n_p", "metric", "tau"}, where);
    PQConfig pq;
    read_count(obj, "l_s", pq.l_s, where);
    read_count(obj, "n_p", pq.n_p, where);
    if (obj.contains("metric")) pq.metric = parse_metric(read_string(obj, "metric", where));
    read_real(obj, "tau", pq.tau, where);
    return pq;
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::string layer_label(const LayerSpec& s) { return "layer '" + s.name + "'"; }

}  // namespace

RunConfig parse_run_config(const std::string& text, RunConfig base, const std::string& origin) {
    const json doc = parse_document(text, origin);
    reject_unknown(doc, {"hw", "memory", "quant", "pq", "seed", "fit", "baseline_cycles", "out_dir"}, origin);
    RunConfig cfg = std::move(base);
    if (doc.contains("hw")) read_hw(doc.at("hw"), cfg.hw, origin + " hw");
    if (doc.contains("memory")) cfg.memory = read_memory(doc.at("memory"), origin + " memory");
    if (doc.contains("quant")) {
        const auto& q = doc.at("quant");
        const std::string where = origin + " quant";
        reject_unknown(q, {"granularity", "calibration", "lo_pct", "hi_pct", "proto_bits", "lut_bits"}, where);
        QuantScheme scheme = cfg.quant.value_or(QuantScheme{});
        if (q.contains("granularity")) scheme.granularity = parse_granularity(read_string(q, "granularity", where));
        if (q.contains("calibration")) scheme.calibration.kind = parse_calibration(read_string(q, "calibration", where));
        read_real(q, "lo_pct", scheme.calibration.lo_pct, where);
        read_real(q, "hi_pct", scheme.calibration.hi_pct, where);
        read_count(q, "proto_bits", scheme.proto_bits, where);
        read_count(q, "lut_bits", scheme.lut_bits, where);
        cfg.quant = scheme;
    }
    if (doc.contains("pq")) cfg.pq = read_pq(doc.at("pq"), origin + " pq");
    read_count(doc, "seed", cfg.seed, origin);
    if (doc.contains("fit")) {
        const auto& f = doc.at("fit");
        const std::string where = origin + " fit";
        reject_unknown(f, {"max_iters", "max_columns", "ridge", "corrector_hidden", "corrector_epochs", "corrector_lr"},
                       where);
        read_count(f, "max_iters", cfg.fit.max_iters, where);
        read_count(f, "max_columns", cfg.fit.max_columns, where);
        if (f.contains("ridge")) {
            if (f.at("ridge").is_null()) {
                cfg.fit.ridge.reset();
            } else {
                double r = 0.0;
                read_real(f, "ridge", r, where);
                cfg.fit.ridge = r;
            }
        }
        read_count(f, "corrector_hidden", cfg.fit.corrector_hidden, where);
        read_count(f, "corrector_epochs", cfg.fit.corrector_epochs, where);
        read_real(f, "corrector_lr", cfg.fit.corrector_lr, where);
    }
    if (doc.contains("baseline_cycles")) {
        double b = 0.0;
        read_real(doc, "baseline_cycles", b, origin);
        cfg.baseline_cycles = b;
    }
    if (doc.contains("out_dir")) cfg.out_dir = read_string(doc, "out_dir", origin);
    return cfg;
}

std::string run_config_to_json(const RunConfig& c) {
    json doc;
    doc["hw"] = {{"ls_vec", c.hw.ls_vec},     {"np_vec", c.hw.np_vec},     {"ns_vec", c.hw.ns_vec},
                 {"nout_vec", c.hw.nout_vec}, {"ls_max", c.hw.ls_max},     {"np_max", c.hw.np_max},
                 {"ns_max", c.hw.ns_max},     {"nout_max", c.hw.nout_max}, {"nin_max", c.hw.nin_max},
                 {"fmax_hz", c.hw.fmax_hz},   {"proto_bits", c.hw.proto_bits}, {"lut_bits", c.hw.lut_bits}};
    doc["memory"] = memory_json(c.memory);
    if (c.quant) {
        doc["quant"] = {{"granularity", std::string(to_string(c.quant->granularity))},
                        {"calibration", std::string(to_string(c.quant->calibration.kind))},
                        {"lo_pct", c.quant->calibration.lo_pct},
                        {"hi_pct", c.quant->calibration.hi_pct},
                        {"proto_bits", c.quant->proto_bits},
                        {"lut_bits", c.quant->lut_bits}};
    }
    if (c.pq) {
        doc["pq"] = {{"l_s", c.pq->l_s},
                     {"n_p", c.pq->n_p},
                     {"metric", std::string(to_string(c.pq->metric))},
                     {"tau", c.pq->tau}};
    }
    doc["seed"] = c.seed;
    doc["fit"] = {{"max_iters", c.fit.max_iters},
                  {"max_columns", c.fit.max_columns},
                  {"ridge", c.fit.ridge ? json(*c.fit.ridge) : json(nullptr)},
                  {"corrector_hidden", c.fit.corrector_hidden},
                  {"corrector_epochs", c.fit.corrector_epochs},
                  {"corrector_lr", c.fit.corrector_lr}};
    if (c.baseline_cycles) doc["baseline_cycles"] = *c.baseline_cycles;
    doc["out_dir"] = c.out_dir;
    return doc.dump(2) + "\n";
}

HwConfig effective_hw(const RunConfig& config) {
    HwConfig hw = config.hw;
    hw.mem_bw_bytes_per_s = config.memory.bytes_per_s;
    validate(hw);
    return hw;
}

Model apply_pq_defaults(Model model, const RunConfig& config) {
    for (auto& layer : model.layers) {
        if (layer.spec.pq_enabled && !layer.pq && config.pq) layer.pq = config.pq;
    }
    for (const auto& layer : model.layers) {
        if (layer.spec.pq_enabled && !layer.pq) {
            throw ShapeError(layer_label(layer.spec) + " is PQ-enabled but has no PQ configuration (set l_s and n_p)");
        }
        if (layer.pq) validate(*layer.pq);
    }
    return model;
}

std::vector<LayerWeights> init_weights(const Model& model, std::uint64_t seed) {
    std::vector<LayerWeights> out;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto& spec = model.layers[i].spec;
        const auto dims = derive_unrolled_dims(spec);
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(i), 0x77u};
        std::mt19937_64 rng(seq);
        const double limit = std::sqrt(6.0 / static_cast<double>(dims.a));
        LayerWeights lw;
        lw.weights = Matrix(spec.c_out, dims.a);
        for (double& w : lw.weights.data()) w = (2.0 * uniform01(rng) - 1.0) * limit;
        if (spec.bias) {
            lw.bias.resize(spec.c_out);
            for (double& b : lw.bias) b = (2.0 * uniform01(rng) - 1.0) * 0.05;
        }
        out.push_back(std::move(lw));
    }
    return out;
}

std::vector<Tensor3> samples_from_tensor(const TensorFile& t) {
    const auto values = tensor_values(t);
    std::size_t n = 1, c = 0, h = 0, w = 0;
    if (t.dims.size() == 4) {
        n = t.dims[0];
        c = t.dims[1];
        h = t.dims[2];
        w = t.dims[3];
    } else if (t.dims.size() == 3) {
        c = t.dims[0];
        h = t.dims[1];
        w = t.dims[2];
    } else {
        throw ShapeError("sample tensor must have rank 3 [C,H,W] or 4 [N,C,H,W], got rank " +
                         std::to_string(t.dims.size()));
    }
    std::vector<Tensor3> out;
    const std::size_t per = c * h * w;
    for (std::size_t i = 0; i < n; ++i) {
        Tensor3 s(c, h, w);
        std::copy(values.begin() + static_cast<std::ptrdiff_t>(i * per),
                  values.begin() + static_cast<std::ptrdiff_t>((i + 1) * per), s.data.begin());
        for (double v : s.data) {
            if (!std::isfinite(v)) throw NumericError("sample " + std::to_string(i) + " contains non-finite values");
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<Tensor3> load_samples(const fs::path& path) {
    try {
        return samples_from_tensor(read_tensor(path));
    } catch (const ShapeError& e) {
        throw ShapeError(path.string() + ": " + e.what());
    }
}

void check_samples(const Model& model, const std::vector<Tensor3>& samples) {
    if (model.layers.empty()) throw ShapeError("model has no layers");
    if (samples.empty()) throw ArgumentError("no input samples");
    const auto& first = model.layers.front().spec;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto in = layer_input_for(samples[i], first);
        if (in.channels != first.c_in || in.height != first.in_h || in.width != first.in_w) {
            std::ostringstream msg;
            msg << layer_label(first) << " expects " << first.c_in << "x" << first.in_h << "x" << first.in_w
                << " inputs but sample " << i << " is " << samples[i].channels << "x" << samples[i].height << "x"
                << samples[i].width;
            throw ShapeError(msg.str());
        }
    }
}

std::string artifact_stem(const std::string& layer_name) {
    std::string out;
    for (char ch : layer_name) {
        const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') ||
                        ch == '-' || ch == '_' || ch == '.';
        out.push_back(ok ? ch : '_');
    }
    if (out.empty() || out == "." || out == "..") out = "layer_" + out;
    return out;
}

std::vector<NetworkLayer> dense_network(const Model& model, const std::vector<LayerWeights>& weights) {
    if (weights.size() != model.layers.size()) throw ShapeError("one weight set per layer is required");
    std::vector<NetworkLayer> net;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto& layer = model.layers[i];
        const auto dims = derive_unrolled_dims(layer.spec);
        const auto& w = weights[i];
        if (w.weights.rows() != layer.spec.c_out || w.weights.cols() != dims.a) {
            std::ostringstream msg;
            msg << layer_label(layer.spec) << " needs " << layer.spec.c_out << "x" << dims.a << " weights, got "
                << w.weights.rows() << "x" << w.weights.cols();
            throw ShapeError(msg.str());
        }
        if (!w.bias.empty() && w.bias.size() != layer.spec.c_out) {
            throw ShapeError(layer_label(layer.spec) + " bias length does not match c_out");
        }
        net.push_back({layer.spec, w.weights, w.bias, std::nullopt, layer.activation});
    }
    return net;
}

Matrix subsample_columns(const Matrix& x, std::size_t max_columns) {
    if (max_columns == 0 || x.cols() <= max_columns) return x;
    Matrix out(x.rows(), max_columns);
    for (std::size_t i = 0; i < max_columns; ++i) {
        const std::size_t src = i * x.cols() / max_columns;
        for (std::size_t r = 0; r < x.rows(); ++r) out(r, i) = x(r, src);
    }
    return out;
}

namespace {

Matrix hconcat(const std::vector<Matrix>& parts) {
    if (parts.empty()) return {};
    std::size_t cols = 0;
    for (const auto& p : parts) cols += p.cols();
    Matrix out(parts.front().rows(), cols);
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t r = 0; r < p.rows(); ++r) {
            std::copy(p.row(r).begin(), p.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(off));
        }
        off += p.cols();
    }
    return out;
}

}  // namespace

std::vector<Matrix> collect_layer_inputs(const std::vector<NetworkLayer>& net, const std::vector<Tensor3>& samples,
                                         std::size_t max_columns) {
    std::vector<std::vector<Matrix>> parts(net.size());
    const std::size_t per_sample = max_columns == 0 ? 0 : ceil_div(max_columns, std::max<std::size_t>(samples.size(), 1));
    std::vector<LayerTrace> trace;
    for (const auto& s : samples) {
        network_forward(s, net, &trace);
        for (std::size_t k = 0; k < net.size(); ++k) parts[k].push_back(subsample_columns(trace[k].unrolled, per_sample));
    }
    std::vector<Matrix> out;
    for (auto& p : parts) out.push_back(subsample_columns(hconcat(p), max_columns));
    return out;
}

std::string fit_report_csv(const std::vector<FitLayerSummary>& layers) {
    std::ostringstream out;
    out << "layer,a,columns,n_s,n_p,l_s,metric,status,iterations,mse_enc,mse_out,mse_out_refit,mse_out_corrected\n";
    for (const auto& l : layers) {
        out << l.name << ',' << l.a << ',' << l.columns << ',' << l.n_s << ',' << l.pq.n_p << ',' << l.pq.l_s << ','
            << to_string(l.pq.metric) << ',' << (l.status == FitStatus::ok ? "ok" : "too_few_samples") << ','
            << l.iterations << ',' << format_real(l.mse_enc) << ',' << format_real(l.mse_out) << ','
            << (l.mse_out_refit ? format_real(*l.mse_out_refit) : "") << ','
            << (l.mse_out_corrected ? format_real(*l.mse_out_corrected) : "") << '\n';
    }
    return out.str();
}

FitOutcome cmd_fit(const Model& model_in, const std::vector<Tensor3>& samples, const RunConfig& config,
                   const std::optional<std::vector<LayerWeights>>& weights) {
    FitOutcome outcome;
    outcome.model = apply_pq_defaults(model_in, config);
    validate(outcome.model);
    check_samples(outcome.model, samples);
    outcome.weights = weights ? *weights : init_weights(outcome.model, config.seed);
    const auto net = dense_network(outcome.model, outcome.weights);

    std::vector<std::size_t> pq_layers;
    for (std::size_t k = 0; k < outcome.model.layers.size(); ++k) {
        if (outcome.model.layers[k].spec.pq_enabled) pq_layers.push_back(k);
    }
    if (pq_layers.empty()) {
        outcome.warnings.push_back("model '" + outcome.model.name + "' has no PQ-enabled layers; nothing to fit");
        return outcome;
    }

    const auto inputs = collect_layer_inputs(net, samples, config.fit.max_columns);
    Artifacts artifacts{outcome.model, outcome.weights, std::vector<std::optional<PQLayerRuntime>>(net.size())};
    for (std::size_t k : pq_layers) {
        const auto& layer = outcome.model.layers[k];
        const auto& spec = layer.spec;
        const PQConfig pq = *layer.pq;
        const Matrix& x = inputs[k];
        const auto layout = subspace_layout(derive_unrolled_dims(spec).a, pq.l_s);

        FitOptions opts;
        opts.max_iters = config.fit.max_iters;
        opts.seed = config.seed * 1000003ULL + k;
        auto fit = fit_prototypes(x, pq, layout, opts);
        if (fit.status == FitStatus::too_few_samples) {
            outcome.warnings.push_back(layer_label(spec) + ": " + std::to_string(x.cols()) +
                                       " sample columns for " + std::to_string(pq.n_p) +
                                       " prototypes; surplus prototypes are perturbed copies");
        }
        const Matrix& w = outcome.weights[k].weights;
        PQLayerRuntime rt = make_runtime(spec, pq, fit.bank, build_lut(w, fit.bank, layout));
        const bool want_corrector = config.fit.corrector_hidden > 0;
        const auto enc = encode_hard(x, rt.bank, layout, pq.metric, want_corrector);
        const Matrix target = reference_forward(x, w);
        const Matrix x_rec = reconstruct_input(enc, rt.bank, layout);

        FitLayerSummary summary;
        summary.name = spec.name;
        summary.a = layout.a;
        summary.columns = x.cols();
        summary.n_s = layout.n_s;
        summary.pq = pq;
        summary.status = fit.status;
        summary.iterations = fit.iterations;
        const auto base = error_report(pq_forward(enc, rt), target, &x_rec, &x);
        summary.mse_enc = base.mse_enc;
        summary.mse_out = base.mse_out;

        if (config.fit.ridge) {
            rt.lut = refit_lut(rt.lut, enc, target, *config.fit.ridge);
            summary.mse_out_refit = error_report(pq_forward(enc, rt), target).mse_out;
        }
        if (want_corrector) {
            const Matrix y = pq_forward(enc, rt);
            Matrix residual(y.cols(), y.rows());
            for (std::size_t o = 0; o < y.rows(); ++o) {
                for (std::size_t j = 0; j < y.cols(); ++j) residual(j, o) = target(o, j) - y(o, j);
            }
            CorrectorOptions copts;
            copts.lr = config.fit.corrector_lr;
            copts.epochs = config.fit.corrector_epochs;
            copts.seed = opts.seed;
            rt.corrector = fit_corrector(distance_features(enc), residual, config.fit.corrector_hidden, copts).corrector;
            summary.mse_out_corrected = error_report(pq_forward(enc, rt), target).mse_out;
        }
        outcome.layers.push_back(summary);
        outcome.runtimes.push_back(rt);
        artifacts.runtimes[k] = std::move(rt);
    }

    if (!config.out_dir.empty()) {
        const fs::path dir = config.out_dir;
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw IoError(dir.string() + ": cannot create directory (" + ec.message() + ")");
        save_artifacts(dir, artifacts, &outcome.written);
        write_text_file(dir / "fit_report.csv", fit_report_csv(outcome.layers));
        outcome.written.push_back(dir / "fit_report.csv");
    }
    return outcome;
}

namespace {

std::vector<double> corrector_payload(const Corrector& c) {
    std::vector<double> out = {static_cast<double>(c.in_dim), static_cast<double>(c.hidden),
                               static_cast<double>(c.out_dim)};
    for (const auto* v : {&c.w1, &c.b1, &c.w2, &c.b2, &c.in_mean, &c.in_scale}) out.insert(out.end(), v->begin(), v->end());
    return out;
}

Corrector corrector_from_payload(const std::vector<double>& p, const std::string& origin) {
    if (p.size() < 3) throw ShapeError(origin + ": corrector payload too short");
    Corrector c;
    c.in_dim = static_cast<std::size_t>(p[0]);
    c.hidden = static_cast<std::size_t>(p[1]);
    c.out_dim = static_cast<std::size_t>(p[2]);
    const std::size_t sizes[] = {c.hidden * c.in_dim, c.hidden, c.out_dim * c.hidden, c.out_dim, c.in_dim, c.in_dim};
    std::size_t need = 3;
    for (auto s : sizes) need += s;
    if (p.size() != need) throw ShapeError(origin + ": corrector payload length does not match its header");
    std::size_t pos = 3;
    std::vector<double>* dest[] = {&c.w1, &c.b1, &c.w2, &c.b2, &c.in_mean, &c.in_scale};
    for (std::size_t i = 0; i < 6; ++i) {
        dest[i]->assign(p.begin() + static_cast<std::ptrdiff_t>(pos),
                        p.begin() + static_cast<std::ptrdiff_t>(pos + sizes[i]));
        pos += sizes[i];
    }
    return c;
}

std::uint32_t u32(std::size_t v) { return static_cast<std::uint32_t>(v); }

void emit(const fs::path& path, const TensorFile& t, std::vector<fs::path>* written) {
    write_tensor(path, t);
    if (written) written->push_back(path);
}

}  // namespace

void save_artifacts(const fs::path& dir, const Artifacts& a, std::vector<fs::path>* written) {
    std::set<std::string> stems;
    for (const auto& layer : a.model.layers) {
        if (!stems.insert(artifact_stem(layer.spec.name)).second) {
            throw ArgumentError("layer names must map to distinct file names ('" + layer.spec.name + "')");
        }
    }
    write_text_file(dir / "model.json", model_to_json(a.model));
    if (written) written->push_back(dir / "model.json");
    for (std::size_t k = 0; k < a.model.layers.size(); ++k) {
        const std::string stem = artifact_stem(a.model.layers[k].spec.name);
        const auto& w = a.weights[k];
        emit(dir / (stem + ".weights.pqt"),
             make_tensor(DType::real64, {u32(w.weights.rows()), u32(w.weights.cols())}, w.weights.data()), written);
        if (!w.bias.empty()) emit(dir / (stem + ".bias.pqt"), make_tensor(DType::real64, {u32(w.bias.size())}, w.bias), written);
        if (!a.runtimes[k]) continue;
        const auto& rt = *a.runtimes[k];
        emit(dir / (stem + ".bank.pqt"),
             make_tensor(DType::real64, {u32(rt.bank.n_s), u32(rt.bank.n_p), u32(rt.bank.l_s)}, rt.bank.values), written);
        emit(dir / (stem + ".lut.pqt"),
             make_tensor(DType::real64, {u32(rt.lut.c_out), u32(rt.lut.n_s), u32(rt.lut.n_p)}, rt.lut.values), written);
        if (rt.corrector) {
            const auto payload = corrector_payload(*rt.corrector);
            emit(dir / (stem + ".corrector.pqt"), make_tensor(DType::real64, {u32(payload.size())}, payload), written);
        }
    }
}

namespace {

std::vector<double> read_values(const fs::path& path, const std::vector<std::uint32_t>& dims) {
    const auto t = read_tensor(path);
    if (t.dims != dims) {
        std::ostringstream msg;
        msg << path.string() << ": dims [";
        for (std::size_t i = 0; i < t.dims.size(); ++i) msg << (i ? "," : "") << t.dims[i];
        msg << "] do not match the model, expected [";
        for (std::size_t i = 0; i < dims.size(); ++i) msg << (i ? "," : "") << dims[i];
        msg << "]";
        throw ShapeError(msg.str());
    }
    return tensor_values(t);
}

}  // namespace

Artifacts load_artifacts(const fs::path& dir) {
    Artifacts a;
    a.model = load_model(dir / "model.json");
    for (const auto& layer : a.model.layers) {
        const auto& spec = layer.spec;
        const std::string stem = artifact_stem(spec.name);
        const auto dims = derive_unrolled_dims(spec);
        LayerWeights lw;
        lw.weights = Matrix(spec.c_out, dims.a, read_values(dir / (stem + ".weights.pqt"), {u32(spec.c_out), u32(dims.a)}));
        if (fs::exists(dir / (stem + ".bias.pqt"))) lw.bias = read_values(dir / (stem + ".bias.pqt"), {u32(spec.c_out)});
        a.weights.push_back(std::move(lw));
        if (!spec.pq_enabled) {
            a.runtimes.emplace_back();
            continue;
        }
        if (!layer.pq) throw ShapeError(layer_label(spec) + " is PQ-enabled but model.json has no PQ configuration");
        const auto layout = subspace_layout(dims.a, layer.pq->l_s);
        PrototypeBank bank(layout.n_s, layer.pq->n_p, layout.l_s);
        bank.values = read_values(dir / (stem + ".bank.pqt"), {u32(layout.n_s), u32(layer.pq->n_p), u32(layout.l_s)});
        LutPQ lut(spec.c_out, layout.n_s, layer.pq->n_p);
        lut.values = read_values(dir / (stem + ".lut.pqt"), {u32(spec.c_out), u32(layout.n_s), u32(layer.pq->n_p)});
        auto rt = make_runtime(spec, *layer.pq, std::move(bank), std::move(lut));
        const fs::path corr = dir / (stem + ".corrector.pqt");
        if (fs::exists(corr)) {
            rt.corrector = corrector_from_payload(tensor_values(read_tensor(corr)), corr.string());
            validate(rt);
        }
        a.runtimes.push_back(std::move(rt));
    }
    return a;
}

std::vector<NetworkLayer> pq_network(const Artifacts& artifacts) {
    auto net = dense_network(artifacts.model, artifacts.weights);
    if (artifacts.runtimes.size() != net.size()) throw ShapeError("one runtime slot per layer is required");
    for (std::size_t k = 0; k < net.size(); ++k) net[k].pq = artifacts.runtimes[k];
    return net;
}

std::vector<QuantizedRuntime> quantize_artifacts(const Artifacts& artifacts, const std::vector<Tensor3>& samples,
                                                 const QuantScheme& scheme) {
    const auto dense = dense_network(artifacts.model, artifacts.weights);
    check_samples(artifacts.model, samples);
    const auto inputs = collect_layer_inputs(dense, samples, 4096);
    std::vector<PQLayerRuntime> runtimes;
    std::vector<Matrix> calib;
    for (std::size_t k = 0; k < artifacts.runtimes.size(); ++k) {
        if (!artifacts.runtimes[k]) continue;
        if (artifacts.runtimes[k]->corrector) {
            throw ArgumentError(layer_label(artifacts.model.layers[k].spec) +
                                ": quantized execution does not support corrector layers");
        }
        runtimes.push_back(*artifacts.runtimes[k]);
        calib.push_back(inputs[k]);
    }
    if (runtimes.empty()) throw ArgumentError("model has no PQ layers to quantize");
    return quantize_runtimes(runtimes, scheme, calib);
}

namespace {

double pq_column_bound(const QuantizedRuntime& q, const LutPQ& lut, std::span<const std::uint32_t> q_idx,
                       std::span<const std::uint32_t> f_idx, std::size_t cols) {
    const std::size_t n_s = q.layout.n_s;
    std::vector<double> range(n_s, 0.0);
    for (std::size_t o = 0; o < lut.c_out; ++o) {
        for (std::size_t n = 0; n < n_s; ++n) {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (std::size_t p = 0; p < lut.n_p; ++p) {
                lo = std::min(lo, lut.at(o, n, p));
                hi = std::max(hi, lut.at(o, n, p));
            }
            range[n] = std::max(range[n], hi - lo);
        }
    }
    const double base = q.lookup_error_bound();
    double worst = cols == 0 ? 0.0 : base;
    for (std::size_t j = 0; j < cols; ++j) {
        double b = base;
        for (std::size_t n = 0; n < n_s; ++n) {
            if (q_idx[n * cols + j] != f_idx[n * cols + j]) b += range[n];
        }
        worst = std::max(worst, b);
    }
    return worst;
}

double row_abs_sum_max(const Matrix& w) {
    double m = 0.0;
    for (std::size_t o = 0; o < w.rows(); ++o) {
        double s = 0.0;
        for (double v : w.row(o)) s += std::abs(v);
        m = std::max(m, s);
    }
    return m;
}

void add_bias_rows(Matrix& y, const std::vector<double>& bias) {
    if (bias.empty()) return;
    for (std::size_t o = 0; o < y.rows(); ++o) {
        for (double& v : y.row(o)) v += bias[o];
    }
}

}  // namespace

QuantNetworkResult quantized_network_forward(const Tensor3& input, const std::vector<NetworkLayer>& net,
                                             const std::vector<QuantizedRuntime>& quantized) {
    QuantNetworkResult r;
    Tensor3 act_f = input;
    Tensor3 act_q = input;
    double e = 0.0;
    std::size_t qi = 0;
    for (const auto& layer : net) {
        const auto& spec = layer.spec;
        const Tensor3 in_f = layer_input_for(act_f, spec);
        const Tensor3 in_q = layer_input_for(act_q, spec);
        if (in_f.channels != spec.c_in || in_f.height != spec.in_h || in_f.width != spec.in_w) {
            throw ShapeError("quantized forward: " + layer_label(spec) + " receives a mismatched input");
        }
        const Matrix x_f = unroll_im2col(in_f, spec);
        const Matrix x_q = unroll_im2col(in_q, spec);
        Matrix y_f, y_q;
        std::size_t sat = 0, mismatch = 0;
        if (layer.pq) {
            if (qi >= quantized.size()) throw ShapeError("quantized forward: fewer quantized runtimes than PQ layers");
            const auto& q = quantized[qi++];
            if (q.layer_name != spec.name) throw ShapeError("quantized forward: runtime order does not match the network");
            if (layer.pq->corrector) throw ArgumentError(layer_label(spec) + ": quantized execution does not support correctors");
            const auto enc = encode_hard(x_f, layer.pq->bank, layer.pq->layout, layer.pq->config.metric);
            y_f = pq_forward(enc, *layer.pq);
            auto qr = quantized_pq_forward(x_q, q);
            y_q = std::move(qr.output);
            sat = qr.saturations;
            for (std::size_t i = 0; i < enc.indices.size(); ++i) mismatch += enc.indices[i] != qr.indices[i];
            e = sat > 0 ? std::numeric_limits<double>::infinity()
                        : pq_column_bound(q, layer.pq->lut, qr.indices, enc.indices, x_f.cols());
        } else {
            y_f = grouped_reference_forward(x_f, layer.weights, spec.groups);
            y_q = grouped_reference_forward(x_q, layer.weights, spec.groups);
            e = e == 0.0 ? 0.0 : e * row_abs_sum_max(layer.weights);
        }
        add_bias_rows(y_f, layer.bias);
        add_bias_rows(y_q, layer.bias);
        apply_activation(y_f, layer.activation);
        apply_activation(y_q, layer.activation);
        act_f = roll_output(y_f, spec);
        act_q = roll_output(y_q, spec);
        r.saturations.push_back(sat);
        r.index_mismatches.push_back(mismatch);
        r.layer_bound.push_back(e);
    }
    if (qi != quantized.size()) throw ShapeError("quantized forward: more quantized runtimes than PQ layers");
    r.float_output = act_f.data;
    r.quant_output = act_q.data;
    r.bound = e;
    return r;
}

EvalReport cmd_eval(const Artifacts& artifacts, const std::vector<Tensor3>& samples,
                    const std::optional<QuantScheme>& scheme) {
    check_samples(artifacts.model, samples);
    const auto dense = dense_network(artifacts.model, artifacts.weights);
    const auto pqnet = pq_network(artifacts);
    const std::size_t L = dense.size();

    struct Acc {
        long double enc_sq = 0, out_sq = 0;
        std::size_t enc_n = 0, out_n = 0;
        double max_abs = 0;
    };
    std::vector<Acc> acc(L);
    long double e2e_sq = 0;
    std::size_t e2e_n = 0;
    EvalReport report;

    std::vector<LayerTrace> trace;
    for (const auto& s : samples) {
        const auto y_dense = network_forward(s, dense, &trace);
        const auto y_pq = network_forward(s, pqnet);
        for (std::size_t i = 0; i < y_dense.size(); ++i) {
            const double d = y_pq[i] - y_dense[i];
            e2e_sq += static_cast<long double>(d) * d;
            report.end_to_end_max_abs_err = std::max(report.end_to_end_max_abs_err, std::abs(d));
        }
        e2e_n += y_dense.size();
        for (std::size_t k = 0; k < L; ++k) {
            if (!artifacts.runtimes[k]) continue;
            const auto& rt = *artifacts.runtimes[k];
            const Matrix& x = trace[k].unrolled;
            const auto enc = encode_hard(x, rt.bank, rt.layout, rt.config.metric, rt.corrector.has_value());
            const Matrix y = pq_forward(enc, rt);
            const Matrix ref = reference_forward(x, artifacts.weights[k].weights);
            const Matrix x_rec = reconstruct_input(enc, rt.bank, rt.layout);
            const auto er = error_report(y, ref, &x_rec, &x);
            acc[k].enc_sq += static_cast<long double>(er.mse_enc) * x.size();
            acc[k].enc_n += x.size();
            acc[k].out_sq += static_cast<long double>(er.mse_out) * y.size();
            acc[k].out_n += y.size();
            acc[k].max_abs = std::max(acc[k].max_abs, er.max_abs_err);
        }
    }
    if (e2e_n) report.end_to_end_mse = static_cast<double>(e2e_sq / e2e_n);
    for (std::size_t k = 0; k < L; ++k) {
        EvalLayerRow row;
        row.name = artifacts.model.layers[k].spec.name;
        row.pq = artifacts.runtimes[k].has_value();
        if (acc[k].enc_n) row.mse_enc = static_cast<double>(acc[k].enc_sq / acc[k].enc_n);
        if (acc[k].out_n) row.mse_out = static_cast<double>(acc[k].out_sq / acc[k].out_n);
        row.max_abs_err = acc[k].max_abs;
        report.layers.push_back(row);
    }

    if (scheme) {
        const auto quantized = quantize_artifacts(artifacts, samples, *scheme);
        report.quant_divergence = 0.0;
        report.quant_bound = 0.0;
        std::vector<double> layer_div(L, 0.0), layer_bound(L, 0.0);
        std::vector<std::size_t> layer_sat(L, 0), layer_mis(L, 0);
        for (const auto& s : samples) {
            network_forward(s, dense, &trace);
            std::size_t qi = 0;
            for (std::size_t k = 0; k < L; ++k) {
                if (!artifacts.runtimes[k]) continue;
                const auto& rt = *artifacts.runtimes[k];
                const auto& q = quantized[qi++];
                const Matrix& x = trace[k].unrolled;
                const auto enc = encode_hard(x, rt.bank, rt.layout, rt.config.metric);
                const Matrix y = pq_forward(enc, rt);
                const auto qr = quantized_pq_forward(x, q);
                for (std::size_t i = 0; i < y.size(); ++i) {
                    layer_div[k] = std::max(layer_div[k], std::abs(qr.output.data()[i] - y.data()[i]));
                }
                layer_sat[k] += qr.saturations;
                for (std::size_t i = 0; i < enc.indices.size(); ++i) layer_mis[k] += enc.indices[i] != qr.indices[i];
                const double b = qr.saturations ? std::numeric_limits<double>::infinity()
                                                : pq_column_bound(q, rt.lut, qr.indices, enc.indices, x.cols());
                layer_bound[k] = std::max(layer_bound[k], b);
            }
            const auto net = quantized_network_forward(s, pqnet, quantized);
            for (std::size_t i = 0; i < net.float_output.size(); ++i) {
                *report.quant_divergence =
                    std::max(*report.quant_divergence, std::abs(net.quant_output[i] - net.float_output[i]));
            }
            *report.quant_bound = std::max(*report.quant_bound, net.bound);
            for (auto v : net.saturations) report.quant_saturations += v;
        }
        for (std::size_t k = 0; k < L; ++k) {
            if (!artifacts.runtimes[k]) continue;
            report.layers[k].quant_max_divergence = layer_div[k];
            report.layers[k].quant_saturations = layer_sat[k];
            report.layers[k].quant_index_mismatches = layer_mis[k];
            report.layers[k].quant_bound = layer_bound[k];
        }
    }
    return report;
}

std::string eval_report_csv(const EvalReport& r) {
    std::ostringstream out;
    out << "layer,pq,mse_enc,mse_out,max_abs_err,quant_max_divergence,quant_bound,quant_saturations,"
           "quant_index_mismatches\n";
    for (const auto& l : r.layers) {
        out << l.name << ',' << (l.pq ? "true" : "false") << ',' << format_real(l.mse_enc) << ','
            << format_real(l.mse_out) << ',' << format_real(l.max_abs_err) << ','
            << (l.quant_max_divergence ? format_real(*l.quant_max_divergence) : "") << ','
            << (l.quant_bound ? format_real(*l.quant_bound) : "") << ',';
        if (l.quant_max_divergence) out << l.quant_saturations << ',' << l.quant_index_mismatches;
        else out << ',';
        out << '\n';
    }
    out << "END_TO_END,," << ',' << format_real(r.end_to_end_mse) << ',' << format_real(r.end_to_end_max_abs_err)
        << ',' << (r.quant_divergence ? format_real(*r.quant_divergence) : "") << ','
        << (r.quant_bound ? format_real(*r.quant_bound) : "") << ',';
    if (r.quant_divergence) out << r.quant_saturations << ',';
    else out << ',';
    out << '\n';
    return out.str();
}

std::string quant_params_csv(const std::vector<QuantizedRuntime>& quantized) {
    std::ostringstream out;
    out << "layer,table,subspace,bits,scale,zero_point,lo,hi\n";
    for (const auto& q : quantized) {
        auto rows = [&](const char* table, const std::vector<QuantParams>& params) {
            for (std::size_t i = 0; i < params.size(); ++i) {
                const auto& p = params[i];
                out << q.layer_name << ',' << table << ',' << (params.size() == 1 ? std::string("all") : std::to_string(i))
                    << ',' << p.bits << ',' << format_real(p.scale) << ',' << p.zero_point << ','
                    << format_real(p.lo) << ',' << format_real(p.hi) << '\n';
            }
        };
        rows("prototypes", q.proto_params);
        rows("lut", q.lut_params);
        out << q.layer_name << ",accumulator,all," << kAccumulatorBits << ',' << format_real(q.acc_lsb) << ",0,"
            << format_real(q.acc_min()) << ',' << format_real(q.acc_max()) << '\n';
    }
    return out.str();
}

void save_quantized(const fs::path& dir, const std::vector<QuantizedRuntime>& quantized, std::vector<fs::path>* written) {
    for (const auto& q : quantized) {
        const std::string stem = artifact_stem(q.layer_name);
        auto codes = [](const std::vector<std::uint32_t>& c, unsigned bits, std::vector<std::uint32_t> dims) {
            std::vector<double> v(c.begin(), c.end());
            return make_tensor(bits <= 8 ? DType::uint8 : DType::int32, std::move(dims), v);
        };
        emit(dir / (stem + ".bank.codes.pqt"),
             codes(q.proto_codes, q.proto_param(0).bits, {u32(q.layout.n_s), u32(q.n_p), u32(q.layout.l_s)}), written);
        emit(dir / (stem + ".lut.codes.pqt"),
             codes(q.lut_codes, q.lut_param(0).bits, {u32(q.c_out), u32(q.layout.n_s), u32(q.n_p)}), written);
    }
    write_text_file(dir / "quant_params.csv", quant_params_csv(quantized));
    if (written) written->push_back(dir / "quant_params.csv");
}

SimulateReport cmd_simulate(const Model& model_in, const RunConfig& config) {
    const Model model = apply_pq_defaults(model_in, config);
    validate(model);
    SimulateReport r;
    r.hw = effective_hw(config);
    r.memory = config.memory;
    r.cycles = network_report(model, r.hw);
    r.latency_us = latency_us(r.cycles.total_cycles, r.hw.fmax_hz);
    r.params_lut_plus_dense = memory_footprint(model, ParamConvention::lut_plus_dense);
    r.params_lut_plus_protos_plus_dense = memory_footprint(model, ParamConvention::lut_plus_protos_plus_dense);
    r.dense_params = dense_parameters(model);
    r.baseline_cycles = config.baseline_cycles;
    if (r.baseline_cycles && r.cycles.total_cycles > 0) {
        r.speedup = *r.baseline_cycles / static_cast<double>(r.cycles.total_cycles);
    }
    return r;
}

std::string simulate_csv(const Model&, const SimulateReport& r) {
    std::ostringstream out;
    out << "layer,a,cols,c_out,n_s,n_p,l_s,compute_cycles,load_cycles,total_cycles,memory_bound,bits_loaded,"
           "latency_us,flops_im2col,flops_pq,flops_ratio,lut_entries,proto_entries\n";
    for (const auto& l : r.cycles.layers) {
        const auto f = flops_footprint(l.dims, l.pq);
        out << l.name << ',' << l.dims.a << ',' << l.dims.cols << ',' << l.dims.c_out << ',' << l.n_s << ','
            << l.pq.n_p << ',' << l.pq.l_s << ',' << l.report.compute_cycles << ',' << l.report.load_cycles << ','
            << l.report.total_cycles << ',' << (l.report.memory_bound ? "true" : "false") << ','
            << l.report.bits_loaded << ',' << format_real(latency_us(l.report.total_cycles, r.hw.fmax_hz)) << ','
            << f.flops_im2col << ',' << f.flops_pq << ',' << format_real(f.ratio) << ',' << f.lut_entries << ','
            << f.proto_entries << '\n';
    }
    out << "TOTAL,,,,,,," << r.cycles.compute_cycles << ",," << r.cycles.total_cycles << ','
        << r.cycles.memory_bound_layers << ",," << format_real(r.latency_us) << ",,,,,\n";
    return out.str();
}

std::string simulate_summary(const Model& model, const SimulateReport& r) {
    std::ostringstream out;
    char buf[64];
    out << "model: " << model.name << '\n';
    out << "memory: " << r.memory.label() << " (" << format_real(r.memory.bytes_per_s) << " B/s)\n";
    out << "fmax: " << format_real(r.hw.fmax_hz) << " Hz\n";
    out << "vectorization: ls " << r.hw.ls_vec << ", np " << r.hw.np_vec << ", ns " << r.hw.ns_vec << ", nout "
        << r.hw.nout_vec << '\n';
    out << "pq layers: " << r.cycles.layers.size() << '\n';
    out << "total cycles: " << r.cycles.total_cycles << '\n';
    std::snprintf(buf, sizeof buf, "%.2f", r.latency_us);
    out << "latency: " << buf << " us\n";
    out << "memory-bound layers: " << r.cycles.memory_bound_layers;
    bool first = true;
    for (const auto& l : r.cycles.layers) {
        if (!l.report.memory_bound) continue;
        out << (first ? " (" : ", ") << l.name;
        first = false;
    }
    out << (first ? "" : ")") << '\n';
    out << "params lut_plus_dense: " << r.params_lut_plus_dense << '\n';
    out << "params lut_plus_protos_plus_dense: " << r.params_lut_plus_protos_plus_dense << '\n';
    out << "dense params: " << r.dense_params << '\n';
    if (r.baseline_cycles) {
        out << "baseline cycles: " << format_real(*r.baseline_cycles) << '\n';
        if (r.speedup) {
            std::snprintf(buf, sizeof buf, "%.3f", *r.speedup);
            out << "speedup: " << buf << "x\n";
        }
    }
    return out.str();
}

SweepGrid parse_sweep_grid(const std::string& text, const std::string& origin) {
    const json doc = parse_document(text, origin);
    reject_unknown(doc, {"in_sizes", "channels", "n_p", "l_s", "memories", "kernel", "stride", "metric", "hw", "baseline"},
                   origin);
    SweepGrid grid = heatmap_grid();
    auto counts = [&](const char* key, std::vector<std::size_t>& out) {
        if (!doc.contains(key)) return;
        const auto& v = doc.at(key);
        if (!v.is_array()) throw ParseError(origin + ": '" + key + "' must be an array");
        out.clear();
        for (const auto& e : v) {
            if (!e.is_number_integer() || e.get<long long>() <= 0) {
                throw ParseError(origin + ": '" + key + "' entries must be positive integers");
            }
            out.push_back(e.get<std::size_t>());
        }
    };
    counts("in_sizes", grid.in_sizes);
    counts("channels", grid.channels);
    counts("n_p", grid.n_ps);
    counts("l_s", grid.l_ss);
    if (doc.contains("memories")) {
        if (!doc.at("memories").is_array()) throw ParseError(origin + ": 'memories' must be an array");
        grid.memories.clear();
        for (const auto& m : doc.at("memories")) grid.memories.push_back(read_memory(m, origin + " memories"));
    }
    read_count(doc, "kernel", grid.kernel, origin);
    read_count(doc, "stride", grid.stride, origin);
    if (doc.contains("metric")) grid.metric = parse_metric(read_string(doc, "metric", origin));
    if (doc.contains("hw")) read_hw(doc.at("hw"), grid.hw, origin + " hw");
    if (doc.contains("baseline")) {
        const auto& b = doc.at("baseline");
        if (!b.is_array()) throw ParseError(origin + ": 'baseline' must be an array");
        for (const auto& e : b) {
            reject_unknown(e, {"in_size", "channels", "cycles"}, origin + " baseline");
            BaselineEntry be;
            read_count(e, "in_size", be.in_size, origin + " baseline");
            read_count(e, "channels", be.channels, origin + " baseline");
            read_real(e, "cycles", be.cycles, origin + " baseline");
            grid.baseline.push_back(be);
        }
    }
    return grid;
}

std::vector<BaselineEntry> parse_baseline_csv(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(origin + ": empty baseline file");
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::string cell;
        std::istringstream ss(s);
        while (std::getline(ss, cell, ',')) {
            while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
            while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
            out.push_back(cell);
        }
        return out;
    };
    const auto header = split(line);
    auto col = [&](const std::string& name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw ParseError(origin + ": missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t ci = col("in_size"), cc = col("channels"), cy = col("cycles");
    std::vector<BaselineEntry> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto cells = split(line);
        if (cells.size() < header.size()) throw ParseError(origin + ": line " + std::to_string(lineno) + " is short");
        try {
            out.push_back({std::stoul(cells[ci]), std::stoul(cells[cc]), std::stod(cells[cy])});
        } catch (const std::exception&) {
            throw ParseError(origin + ": line " + std::to_string(lineno) + " has a malformed number");
        }
    }
    return out;
}

std::string cmd_sweep(const SweepGrid& grid) {
    std::ostringstream out;
    write_sweep_csv(out, sweep(grid));
    return out.str();
}

}  // namespace pqa
