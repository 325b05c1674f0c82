// Python bindings: numpy in, numpy out, over the core library.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pqa/errors.hpp"
#include "pqa/pipeline.hpp"

namespace py = pybind11;
using namespace pqa;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
    if (a.ndim() != 2) throw ShapeError("expected a 2-D array");
    return Matrix(a.shape(0), a.shape(1), std::vector<double>(a.data(), a.data() + a.size()));
}

Array from_matrix(const Matrix& m) {
    Array out({m.rows(), m.cols()});
    std::copy(m.data().begin(), m.data().end(), out.mutable_data());
    return out;
}

PrototypeBank to_bank(const Array& a) {
    if (a.ndim() != 3) throw ShapeError("bank must be [n_s, n_p, l_s]");
    PrototypeBank b(a.shape(0), a.shape(1), a.shape(2));
    std::copy(a.data(), a.data() + a.size(), b.values.begin());
    return b;
}

Array from_bank(const PrototypeBank& b) {
    Array out({b.n_s, b.n_p, b.l_s});
    std::copy(b.values.begin(), b.values.end(), out.mutable_data());
    return out;
}

LayerSpec linear_spec(std::size_t a, std::size_t c_out) {
    LayerSpec s;
    s.name = "layer";
    s.kind = LayerKind::linear;
    s.c_in = a;
    s.c_out = c_out;
    s.pq_enabled = true;
    return s;
}

}  // namespace

PYBIND11_MODULE(_pqa, m) {
    m.doc() = "Product-quantized layer inference and accelerator cost model";

    py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

    m.def("subspace_layout", [](std::size_t a, std::size_t l_s) {
        const auto l = subspace_layout(a, l_s);
        return py::make_tuple(l.n_s, l.padded_rows());
    }, py::arg("a"), py::arg("l_s"), "Returns (n_s, padded rows).");

    m.def("fit_prototypes", [](const Array& samples, std::size_t n_p, std::size_t l_s, std::uint64_t seed,
                               std::size_t max_iters) {
        const Matrix x = to_matrix(samples);
        FitOptions opt;
        opt.seed = seed;
        opt.max_iters = max_iters;
        const auto fit = fit_prototypes(x, PQConfig{n_p, l_s}, subspace_layout(x.rows(), l_s), opt);
        return from_bank(fit.bank);
    }, py::arg("samples"), py::arg("n_p"), py::arg("l_s"), py::arg("seed") = 0, py::arg("max_iters") = 25,
       "k-means prototypes for columns of `samples`, shaped [n_s, n_p, l_s].");

    m.def("encode", [](const Array& x, const Array& bank, const std::string& metric) {
        const Matrix xm = to_matrix(x);
        const PrototypeBank b = to_bank(bank);
        const auto enc = encode_hard(xm, b, subspace_layout(xm.rows(), b.l_s), parse_metric(metric));
        py::array_t<std::uint32_t> out({enc.n_s, enc.cols});
        std::copy(enc.indices.begin(), enc.indices.end(), out.mutable_data());
        return out;
    }, py::arg("x"), py::arg("bank"), py::arg("metric") = "l2_squared");

    m.def("pq_matmul", [](const Array& x, const Array& weights, const Array& bank, const std::string& metric) {
        const Matrix xm = to_matrix(x), w = to_matrix(weights);
        const PrototypeBank b = to_bank(bank);
        const auto layout = subspace_layout(w.cols(), b.l_s);
        PQConfig cfg{b.n_p, b.l_s};
        cfg.metric = parse_metric(metric);
        const auto rt = make_runtime(linear_spec(w.cols(), w.rows()), cfg, b, build_lut(w, b, layout));
        return from_matrix(pq_forward(xm, rt));
    }, py::arg("x"), py::arg("weights"), py::arg("bank"), py::arg("metric") = "l2_squared",
       "Approximates weights @ x by table lookups.");

    m.def("zoo_names", &zoo_names);
    m.def("model_json", [](const std::string& name) { return model_to_json(zoo_model(name)); });

    m.def("parameter_count", [](const std::string& model, std::size_t l_s, std::size_t n_p, bool with_prototypes) {
        return memory_footprint(with_uniform_pq(resolve_model(model), PQConfig{n_p, l_s}),
                                with_prototypes ? ParamConvention::lut_plus_protos_plus_dense
                                                : ParamConvention::lut_plus_dense);
    }, py::arg("model"), py::arg("l_s"), py::arg("n_p"), py::arg("with_prototypes") = false);

    m.def("simulate", [](const std::string& model, const std::string& config_json) {
        const RunConfig cfg = parse_run_config(config_json);
        const Model mdl = resolve_model(model);
        const auto r = cmd_simulate(mdl, cfg);
        py::dict d;
        d["total_cycles"] = r.cycles.total_cycles;
        d["compute_cycles"] = r.cycles.compute_cycles;
        d["memory_bound_layers"] = r.cycles.memory_bound_layers;
        d["latency_us"] = r.latency_us;
        d["params_lut_plus_dense"] = r.params_lut_plus_dense;
        d["dense_params"] = r.dense_params;
        d["csv"] = simulate_csv(mdl, r);
        return d;
    }, py::arg("model"), py::arg("config_json") = "{}", "Cycle and footprint report; config uses the CLI's JSON keys.");

    m.def("flops_ratio", [](std::size_t c_out, std::size_t n_p, std::size_t l_s) {
        return flops_ratio_closed_form(c_out, n_p, l_s);
    });

    m.def("sweep_csv", [](const std::string& grid_json) { return cmd_sweep(parse_sweep_grid(grid_json)); },
          py::arg("grid_json") = "{}");
}
