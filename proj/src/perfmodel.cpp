#include "pqa/perfmodel.hpp"

#include <cmath>
#include <cstdio>

#include "pqa/errors.hpp"

namespace pqa {

std::string_view to_string(MemoryKind kind) {
    switch (kind) {
        case MemoryKind::ddr4: return "ddr4";
        case MemoryKind::hbm: return "hbm";
        case MemoryKind::custom: return "custom";
    }
    return "custom";
}

MemoryKind parse_memory_kind(std::string_view text) {
    if (text == "ddr4") return MemoryKind::ddr4;
    if (text == "hbm") return MemoryKind::hbm;
    if (text == "custom") return MemoryKind::custom;
    throw ParseError("unknown memory kind '" + std::string(text) + "' (expected ddr4, hbm or custom)");
}

std::string MemorySpec::label() const { return std::string(to_string(kind)); }

MemorySpec memory_spec(MemoryKind kind, double custom_bytes_per_s) {
    switch (kind) {
        case MemoryKind::ddr4: return {kind, kDdr4BytesPerS};
        case MemoryKind::hbm: return {kind, kHbmBytesPerS};
        case MemoryKind::custom:
            if (!(custom_bytes_per_s > 0.0) || !std::isfinite(custom_bytes_per_s)) {
                throw ArgumentError("custom memory needs a positive bandwidth in bytes/s");
            }
            return {kind, custom_bytes_per_s};
    }
    return {};
}

void validate(const HwConfig& hw) {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) throw ArgumentError(std::string("hardware parameter ") + name + " must be >= 1");
    };
    positive(hw.ls_vec, "ls_vec");
    positive(hw.np_vec, "np_vec");
    positive(hw.ns_vec, "ns_vec");
    positive(hw.nout_vec, "nout_vec");
    positive(hw.ls_max, "ls_max");
    positive(hw.np_max, "np_max");
    positive(hw.ns_max, "ns_max");
    positive(hw.nout_max, "nout_max");
    positive(hw.nin_max, "nin_max");
    if (hw.ls_vec > hw.ls_max || hw.np_vec > hw.np_max || hw.ns_vec > hw.ns_max || hw.nout_vec > hw.nout_max) {
        throw ArgumentError("a vectorization parameter exceeds its maximum");
    }
    if (!(hw.fmax_hz > 0.0) || !std::isfinite(hw.fmax_hz)) throw ArgumentError("fmax_hz must be positive");
    if (!(hw.mem_bw_bytes_per_s > 0.0)) throw ArgumentError("memory bandwidth must be positive");
    if (hw.proto_bits == 0 || hw.lut_bits == 0) throw ArgumentError("component bit widths must be >= 1");
}

std::uint64_t compute_cycles(const UnrolledDims& dims, const PQConfig& pq, const HwConfig& hw) {
    const std::size_t n_s = subspace_layout(dims.a, pq.l_s).n_s;
    const std::uint64_t encode = ceil_div(pq.n_p, hw.np_vec) * ceil_div(pq.l_s, hw.ls_vec);
    const std::uint64_t lookup = ceil_div(dims.c_out, hw.nout_vec);
    return std::max(encode, lookup) * ceil_div(n_s, hw.ns_vec) * dims.cols;
}

LoadBreakdown load_breakdown(const UnrolledDims& dims, const PQConfig& pq, const HwConfig& hw) {
    if (!(hw.mem_bw_bytes_per_s > 0.0) || !(hw.fmax_hz > 0.0)) {
        throw ArgumentError("load cycles need positive bandwidth and frequency");
    }
    const std::uint64_t n_s = subspace_layout(dims.a, pq.l_s).n_s;
    LoadBreakdown out;
    out.internal = ceil_div(dims.c_out * pq.n_p * n_s, hw.nout_vec * hw.ns_vec);
    out.bits = n_s * pq.n_p * pq.l_s * hw.proto_bits + n_s * pq.n_p * dims.c_out * hw.lut_bits;
    const long double bits_per_cycle = static_cast<long double>(hw.mem_bw_bytes_per_s) * 8.0L / hw.fmax_hz;
    const long double q = static_cast<long double>(out.bits) / bits_per_cycle;
    const long double nearest = std::round(q);
    // Quotients that are integers up to rounding noise stay exact.
    out.external = static_cast<std::uint64_t>(std::abs(q - nearest) <= 1e-9L * std::max(1.0L, q) ? nearest : std::ceil(q));
    return out;
}

std::uint64_t load_cycles(const UnrolledDims& dims, const PQConfig& pq, const HwConfig& hw) {
    return load_breakdown(dims, pq, hw).cycles();
}

LayerCycleReport layer_report(const UnrolledDims& dims, const PQConfig& pq, const HwConfig& hw) {
    LayerCycleReport r;
    r.compute_cycles = compute_cycles(dims, pq, hw);
    const auto load = load_breakdown(dims, pq, hw);
    r.load_cycles = load.cycles();
    r.bits_loaded = load.bits;
    r.total_cycles = std::max(r.compute_cycles, r.load_cycles);
    r.memory_bound = r.load_cycles > r.compute_cycles;
    return r;
}

NetworkCycleReport network_report(const Model& model, const HwConfig& hw) {
    validate(hw);
    NetworkCycleReport net;
    for (const auto& layer : model.layers) {
        if (!layer.spec.pq_enabled) continue;
        if (!layer.pq) throw ShapeError("layer '" + layer.spec.name + "' is PQ-enabled but has no PQ configuration");
        NamedLayerReport entry;
        entry.name = layer.spec.name;
        entry.dims = derive_unrolled_dims(layer.spec);
        entry.pq = *layer.pq;
        entry.n_s = subspace_layout(entry.dims.a, entry.pq.l_s).n_s;
        entry.report = layer_report(entry.dims, entry.pq, hw);
        net.total_cycles += entry.report.total_cycles;
        net.compute_cycles += entry.report.compute_cycles;
        if (entry.report.memory_bound) ++net.memory_bound_layers;
        net.layers.push_back(std::move(entry));
    }
    return net;
}

double latency_us(std::uint64_t cycles, double fmax_hz) {
    if (!(fmax_hz > 0.0)) throw ArgumentError("fmax_hz must be positive");
    return static_cast<double>(cycles) / fmax_hz * 1e6;
}

std::uint64_t distance_flops(const PQConfig& pq) {
    return (pq.metric == Metric::l1 ? 2 : 3) * static_cast<std::uint64_t>(pq.n_p) * pq.l_s;
}

FootprintReport flops_footprint(const UnrolledDims& dims, const PQConfig& pq) {
    const std::uint64_t n_s = subspace_layout(dims.a, pq.l_s).n_s;
    FootprintReport f;
    f.flops_im2col = 2ULL * dims.a * dims.cols * dims.c_out;
    f.flops_enc = n_s * distance_flops(pq) * dims.cols;
    f.flops_add = (n_s - 1) * dims.cols * dims.c_out;
    f.flops_pq = f.flops_enc + f.flops_add;
    f.ratio = static_cast<double>(f.flops_im2col) / static_cast<double>(f.flops_pq);
    f.lut_entries = n_s * pq.n_p * dims.c_out;
    f.proto_entries = n_s * pq.n_p * pq.l_s;
    f.params_pq = f.lut_entries + f.proto_entries;
    return f;
}

double flops_ratio_closed_form(std::size_t c_out, std::size_t n_p, std::size_t l_s) {
    const double c = static_cast<double>(c_out);
    const double ls = static_cast<double>(l_s);
    return 2.0 * c * ls / (3.0 * static_cast<double>(n_p) * ls + c);
}

double flops_ratio_exact(std::size_t n_s, std::size_t c_out, std::size_t n_p, std::size_t l_s) {
    const double ns = static_cast<double>(n_s);
    const double c = static_cast<double>(c_out);
    const double ls = static_cast<double>(l_s);
    return 2.0 * ns * ls * c / (3.0 * ns * static_cast<double>(n_p) * ls + (ns - 1.0) * c);
}

std::string_view to_string(ParamConvention c) {
    return c == ParamConvention::lut_plus_dense ? "lut_plus_dense" : "lut_plus_protos_plus_dense";
}

ParamConvention parse_param_convention(std::string_view text) {
    if (text == "lut_plus_dense") return ParamConvention::lut_plus_dense;
    if (text == "lut_plus_protos_plus_dense") return ParamConvention::lut_plus_protos_plus_dense;
    throw ParseError("unknown parameter convention '" + std::string(text) + "'");
}

std::uint64_t memory_footprint(const Model& model, ParamConvention convention) {
    std::uint64_t total = 0;
    for (const auto& layer : model.layers) {
        if (!layer.spec.pq_enabled) {
            total += dense_parameter_count(layer.spec);
            continue;
        }
        if (!layer.pq) throw ShapeError("layer '" + layer.spec.name + "' is PQ-enabled but has no PQ configuration");
        const auto f = flops_footprint(derive_unrolled_dims(layer.spec), *layer.pq);
        total += f.lut_entries;
        if (convention == ParamConvention::lut_plus_protos_plus_dense) total += f.proto_entries;
    }
    return total;
}

std::uint64_t dense_parameters(const Model& model) {
    std::uint64_t total = 0;
    for (const auto& layer : model.layers) total += dense_parameter_count(layer.spec);
    return total;
}

std::uint64_t dense_model_flops(const Model& model) {
    std::uint64_t total = 0;
    for (const auto& layer : model.layers) total += dense_flops(layer.spec);
    return total;
}

Model with_uniform_pq(Model model, const PQConfig& pq) {
    for (auto& layer : model.layers) {
        if (layer.spec.pq_enabled) layer.pq = pq;
    }
    return model;
}

double area_ealm(double alms, double dsps, double brams) {
    if (alms < 0.0 || dsps < 0.0 || brams < 0.0) throw ArgumentError("area counts must be non-negative");
    return alms + 30.0 * dsps + 40.0 * brams;
}

SweepGrid heatmap_grid() {
    SweepGrid grid;
    grid.in_sizes = {4, 8, 16, 32, 64};
    grid.channels = {16, 32, 64, 128, 256};
    grid.n_ps = {8, 16, 32, 64, 128};
    grid.l_ss = {4, 8, 16, 32, 64};
    grid.memories = {memory_spec(MemoryKind::ddr4), memory_spec(MemoryKind::hbm)};
    return grid;
}

std::vector<SweepRecord> sweep(const SweepGrid& grid) {
    if (grid.in_sizes.empty() || grid.channels.empty() || grid.n_ps.empty() || grid.l_ss.empty() ||
        grid.memories.empty()) {
        throw ArgumentError("sweep: the grid is empty");
    }
    if (grid.kernel == 0 || grid.stride == 0) throw ArgumentError("sweep: kernel and stride must be >= 1");
    std::vector<SweepRecord> records;
    records.reserve(grid.in_sizes.size() * grid.channels.size() * grid.n_ps.size() * grid.l_ss.size() *
                    grid.memories.size());
    for (std::size_t in : grid.in_sizes) {
        for (std::size_t ch : grid.channels) {
            LayerSpec spec;
            spec.name = "sweep";
            spec.c_in = ch;
            spec.c_out = ch;
            spec.k_h = grid.kernel;
            spec.k_w = grid.kernel;
            spec.stride = grid.stride;
            spec.in_h = in;
            spec.in_w = in;
            validate(spec);
            const auto dims = derive_unrolled_dims(spec);
            std::optional<double> baseline;
            for (const auto& b : grid.baseline) {
                if (b.in_size == in && b.channels == ch) baseline = b.cycles;
            }
            for (std::size_t np : grid.n_ps) {
                for (std::size_t ls : grid.l_ss) {
                    PQConfig pq{np, ls, grid.metric, 1.0};
                    validate(pq);
                    for (const auto& mem : grid.memories) {
                        HwConfig hw = grid.hw;
                        hw.mem_bw_bytes_per_s = mem.bytes_per_s;
                        validate(hw);
                        SweepRecord r;
                        r.in_size = in;
                        r.channels = ch;
                        r.kernel = grid.kernel;
                        r.n_p = np;
                        r.l_s = ls;
                        r.memory = mem;
                        r.dims = dims;
                        r.n_s = subspace_layout(dims.a, ls).n_s;
                        r.cycles = layer_report(dims, pq, hw);
                        r.footprint = flops_footprint(dims, pq);
                        r.baseline_cycles = baseline;
                        if (baseline) r.speedup = *baseline / static_cast<double>(r.cycles.total_cycles);
                        records.push_back(r);
                    }
                }
            }
        }
    }
    return records;
}

namespace {

std::string fmt_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

void write_sweep_csv(std::ostream& out, const std::vector<SweepRecord>& records) {
    out << "in_size,channels,kernel,n_p,l_s,memory,mem_bw_bytes_per_s,a,cols,c_out,n_s,"
           "compute_cycles,load_cycles,total_cycles,memory_bound,bits_loaded,"
           "flops_im2col,flops_enc,flops_add,flops_pq,flops_ratio,lut_entries,proto_entries,params_pq,"
           "baseline_cycles,speedup\n";
    for (const auto& r : records) {
        out << r.in_size << ',' << r.channels << ',' << r.kernel << ',' << r.n_p << ',' << r.l_s << ','
            << r.memory.label() << ',' << fmt_real(r.memory.bytes_per_s) << ',' << r.dims.a << ',' << r.dims.cols
            << ',' << r.dims.c_out << ',' << r.n_s << ',' << r.cycles.compute_cycles << ',' << r.cycles.load_cycles
            << ',' << r.cycles.total_cycles << ',' << (r.cycles.memory_bound ? "true" : "false") << ','
            << r.cycles.bits_loaded << ',' << r.footprint.flops_im2col << ',' << r.footprint.flops_enc << ','
            << r.footprint.flops_add << ',' << r.footprint.flops_pq << ',' << fmt_real(r.footprint.ratio) << ','
            << r.footprint.lut_entries << ',' << r.footprint.proto_entries << ',' << r.footprint.params_pq << ','
            << (r.baseline_cycles ? fmt_real(*r.baseline_cycles) : "") << ','
            << (r.speedup ? fmt_real(*r.speedup) : "") << '\n';
    }
}

}  // namespace pqa
