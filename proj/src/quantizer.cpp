#include "pqa/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "pqa/errors.hpp"

namespace pqa {

std::string_view to_string(Granularity g) {
    switch (g) {
        case Granularity::global: return "global";
        case Granularity::per_layer: return "per_layer";
        case Granularity::per_subspace: return "per_subspace";
    }
    return "per_subspace";
}

std::string_view to_string(CalibrationKind c) {
    return c == CalibrationKind::percentile ? "percentile" : "full_range";
}

Granularity parse_granularity(std::string_view text) {
    if (text == "global") return Granularity::global;
    if (text == "per_layer") return Granularity::per_layer;
    if (text == "per_subspace") return Granularity::per_subspace;
    throw ParseError("unknown quantization granularity '" + std::string(text) + "'");
}

CalibrationKind parse_calibration(std::string_view text) {
    if (text == "full_range") return CalibrationKind::full_range;
    if (text == "percentile") return CalibrationKind::percentile;
    throw ParseError("unknown calibration '" + std::string(text) + "'");
}

void validate_bits(unsigned bits) {
    if (bits < 2 || bits > 16) throw ArgumentError("bit width must be in [2, 16], got " + std::to_string(bits));
}

void validate(const QuantScheme& scheme) {
    validate_bits(scheme.proto_bits);
    validate_bits(scheme.lut_bits);
    const auto& cal = scheme.calibration;
    if (cal.kind == CalibrationKind::percentile &&
        !(cal.lo_pct >= 0.0 && cal.lo_pct < cal.hi_pct && cal.hi_pct <= 100.0)) {
        throw ArgumentError("percentile calibration needs 0 <= lo_pct < hi_pct <= 100");
    }
}

double percentile(std::vector<double> values, double pct) {
    if (values.empty()) throw ArgumentError("percentile of an empty sequence");
    const double pos = pct / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
    const double vlo = values[lo];
    if (hi == lo) return vlo;
    const double vhi = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
    return vlo + (pos - static_cast<double>(lo)) * (vhi - vlo);
}

QuantParams calibrate(std::span<const double> values, unsigned bits, const Calibration& calibration) {
    validate_bits(bits);
    if (values.empty()) throw ArgumentError("calibrate: no values");
    QuantParams p;
    p.bits = bits;
    if (calibration.kind == CalibrationKind::percentile) {
        if (!(calibration.lo_pct >= 0.0 && calibration.lo_pct < calibration.hi_pct && calibration.hi_pct <= 100.0)) {
            throw ArgumentError("calibrate: need 0 <= lo_pct < hi_pct <= 100");
        }
        std::vector<double> copy(values.begin(), values.end());
        p.lo = percentile(copy, calibration.lo_pct);
        p.hi = percentile(std::move(copy), calibration.hi_pct);
    } else {
        const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
        p.lo = *mn;
        p.hi = *mx;
    }
    if (!std::isfinite(p.lo) || !std::isfinite(p.hi)) throw NumericError("calibrate: non-finite values");
    if (p.hi > p.lo) {
        p.scale = (p.hi - p.lo) / static_cast<double>(p.code_max());
    } else {
        // Degenerate range: one step of |c| maps code 0 exactly onto c.
        p.scale = p.lo != 0.0 ? std::abs(p.lo) : 1.0;
    }
    p.zero_point = std::llround(-p.lo / p.scale);
    return p;
}

std::uint32_t quantize(double x, const QuantParams& p) {
    const double code = std::round(x / p.scale) + static_cast<double>(p.zero_point);
    return static_cast<std::uint32_t>(std::clamp(code, 0.0, static_cast<double>(p.code_max())));
}

double dequantize(std::uint32_t code, const QuantParams& p) {
    return static_cast<double>(static_cast<std::int64_t>(code) - p.zero_point) * p.scale;
}

double QuantizedRuntime::lookup_error_bound() const {
    double bound = 0.0;
    for (std::size_t n = 0; n < layout.n_s; ++n) bound += lut_max_error[n] + acc_lsb / 2.0;
    return bound;
}

namespace {

void append_proto_values(const PQLayerRuntime& rt, std::size_t n, std::vector<double>& out) {
    for (std::size_t p = 0; p < rt.bank.n_p; ++p) {
        const auto proto = rt.bank.prototype(n, p);
        for (std::size_t k = 0; k < rt.layout.l_s; ++k) {
            if (n * rt.layout.l_s + k < rt.layout.a) out.push_back(proto[k]);
        }
    }
}

void append_input_values(const PQLayerRuntime& rt, const Matrix& x, std::size_t n, std::vector<double>& out) {
    for (std::size_t k = 0; k < rt.layout.l_s; ++k) {
        const std::size_t r = n * rt.layout.l_s + k;
        if (r >= rt.layout.a || r >= x.rows()) break;
        const auto row = x.row(r);
        out.insert(out.end(), row.begin(), row.end());
    }
}

void append_lut_values(const PQLayerRuntime& rt, std::size_t n, std::vector<double>& out) {
    for (std::size_t o = 0; o < rt.lut.c_out; ++o) {
        for (std::size_t p = 0; p < rt.lut.n_p; ++p) out.push_back(rt.lut.at(o, n, p));
    }
}

double power_of_two_at_least(double x) { return std::ldexp(1.0, static_cast<int>(std::ceil(std::log2(x)))); }

}  // namespace

std::vector<QuantizedRuntime> quantize_runtimes(std::span<const PQLayerRuntime> runtimes, const QuantScheme& scheme,
                                                std::span<const Matrix> calib_inputs) {
    validate(scheme);
    if (calib_inputs.size() != runtimes.size()) {
        throw ArgumentError("quantize_runtimes: need one calibration matrix per layer");
    }
    for (std::size_t i = 0; i < runtimes.size(); ++i) {
        validate(runtimes[i]);
        const auto& x = calib_inputs[i];
        if (x.size() > 0 && x.rows() != runtimes[i].layout.a && x.rows() != runtimes[i].layout.padded_rows()) {
            throw ShapeError("quantize_runtimes: calibration input rows do not match layer '" +
                             runtimes[i].layer.name + "'");
        }
    }

    std::optional<QuantParams> global_proto;
    std::optional<QuantParams> global_lut;
    if (scheme.granularity == Granularity::global) {
        std::vector<double> protos;
        std::vector<double> luts;
        for (std::size_t i = 0; i < runtimes.size(); ++i) {
            for (std::size_t n = 0; n < runtimes[i].layout.n_s; ++n) {
                append_proto_values(runtimes[i], n, protos);
                append_input_values(runtimes[i], calib_inputs[i], n, protos);
                append_lut_values(runtimes[i], n, luts);
            }
        }
        global_proto = calibrate(protos, scheme.proto_bits, scheme.calibration);
        global_lut = calibrate(luts, scheme.lut_bits, scheme.calibration);
    }

    std::vector<QuantizedRuntime> out;
    out.reserve(runtimes.size());
    for (std::size_t i = 0; i < runtimes.size(); ++i) {
        const auto& rt = runtimes[i];
        const auto& calib = calib_inputs[i];
        QuantizedRuntime q;
        q.layer_name = rt.layer.name;
        q.layout = rt.layout;
        q.n_p = rt.config.n_p;
        q.c_out = rt.layer.c_out;
        q.metric = rt.config.metric;
        q.granularity = scheme.granularity;
        const std::size_t n_s = rt.layout.n_s;

        switch (scheme.granularity) {
            case Granularity::global:
                q.proto_params = {*global_proto};
                q.lut_params = {*global_lut};
                break;
            case Granularity::per_layer: {
                std::vector<double> protos;
                std::vector<double> luts;
                for (std::size_t n = 0; n < n_s; ++n) {
                    append_proto_values(rt, n, protos);
                    append_input_values(rt, calib, n, protos);
                    append_lut_values(rt, n, luts);
                }
                q.proto_params = {calibrate(protos, scheme.proto_bits, scheme.calibration)};
                q.lut_params = {calibrate(luts, scheme.lut_bits, scheme.calibration)};
                break;
            }
            case Granularity::per_subspace:
                for (std::size_t n = 0; n < n_s; ++n) {
                    std::vector<double> protos;
                    std::vector<double> luts;
                    append_proto_values(rt, n, protos);
                    append_input_values(rt, calib, n, protos);
                    append_lut_values(rt, n, luts);
                    q.proto_params.push_back(calibrate(protos, scheme.proto_bits, scheme.calibration));
                    q.lut_params.push_back(calibrate(luts, scheme.lut_bits, scheme.calibration));
                }
                break;
        }

        q.proto_codes.resize(rt.bank.values.size());
        for (std::size_t n = 0; n < n_s; ++n) {
            const auto& p = q.proto_param(n);
            for (std::size_t e = 0; e < q.n_p * rt.layout.l_s; ++e) {
                const std::size_t idx = n * q.n_p * rt.layout.l_s + e;
                q.proto_codes[idx] = quantize(rt.bank.values[idx], p);
            }
        }

        q.lut_codes.resize(rt.lut.values.size());
        q.lut_max_error.assign(n_s, 0.0);
        double worst_sum = 0.0;
        for (std::size_t o = 0; o < q.c_out; ++o) {
            double row_sum = 0.0;
            for (std::size_t n = 0; n < n_s; ++n) {
                const auto& p = q.lut_param(n);
                double row_max = 0.0;
                for (std::size_t pp = 0; pp < q.n_p; ++pp) {
                    const double v = rt.lut.at(o, n, pp);
                    const std::uint32_t code = quantize(v, p);
                    q.lut_codes[(o * n_s + n) * q.n_p + pp] = code;
                    const double back = dequantize(code, p);
                    q.lut_max_error[n] = std::max(q.lut_max_error[n], std::abs(back - v));
                    row_max = std::max(row_max, std::abs(back));
                }
                row_sum += row_max;
            }
            worst_sum = std::max(worst_sum, row_sum);
        }

        // Accumulator range: twice the largest calibrated output, never more
        // than the worst case the table allows.
        double target = worst_sum;
        if (calib.size() > 0) {
            const Matrix y = pq_forward(calib, rt);
            double observed = 0.0;
            for (double v : y.data()) observed = std::max(observed, std::abs(v));
            if (observed > 0.0) target = std::min(target, 2.0 * observed);
        }
        if (!(target > 0.0)) target = 1.0;
        q.acc_lsb = power_of_two_at_least(target / 32767.0);
        out.push_back(std::move(q));
    }
    return out;
}

QuantizedRuntime quantize_runtime(const PQLayerRuntime& rt, const QuantScheme& scheme, const Matrix& calib_inputs) {
    auto all = quantize_runtimes(std::span(&rt, 1), scheme, std::span(&calib_inputs, 1));
    return std::move(all.front());
}

QuantForwardResult quantized_pq_forward(const Matrix& input, const QuantizedRuntime& q,
                                        const std::optional<QuantParams>& requant) {
    const auto& layout = q.layout;
    if (input.rows() != layout.a && input.rows() != layout.padded_rows()) {
        std::ostringstream msg;
        msg << "quantized_pq_forward: input has " << input.rows() << " rows, layer '" << q.layer_name << "' needs "
            << layout.a;
        throw ShapeError(msg.str());
    }
    const std::size_t cols = input.cols();
    const std::size_t n_s = layout.n_s;
    const std::size_t l_s = layout.l_s;
    QuantForwardResult result;
    result.indices.assign(n_s * cols, 0);

    std::vector<double> sub(l_s);
    std::vector<std::int64_t> codes(l_s);
    for (std::size_t n = 0; n < n_s; ++n) {
        const auto& p = q.proto_param(n);
        for (std::size_t j = 0; j < cols; ++j) {
            gather_subvector(input, layout, n, j, sub);
            for (std::size_t k = 0; k < l_s; ++k) codes[k] = quantize(sub[k], p);
            std::int64_t best = std::numeric_limits<std::int64_t>::max();
            std::uint32_t best_p = 0;
            for (std::size_t pp = 0; pp < q.n_p; ++pp) {
                const std::uint32_t* proto = &q.proto_codes[(n * q.n_p + pp) * l_s];
                std::int64_t d = 0;
                for (std::size_t k = 0; k < l_s; ++k) {
                    const std::int64_t diff = codes[k] - static_cast<std::int64_t>(proto[k]);
                    d += q.metric == Metric::l2_squared ? diff * diff : (diff < 0 ? -diff : diff);
                }
                if (d < best) {
                    best = d;
                    best_p = static_cast<std::uint32_t>(pp);
                }
            }
            result.indices[n * cols + j] = best_p;
        }
    }

    result.output = Matrix(q.c_out, cols);
    for (std::size_t o = 0; o < q.c_out; ++o) {
        for (std::size_t j = 0; j < cols; ++j) {
            std::int64_t acc = 0;
            for (std::size_t n = 0; n < n_s; ++n) {
                const std::uint32_t code = q.lut_codes[(o * n_s + n) * q.n_p + result.indices[n * cols + j]];
                const double v = dequantize(code, q.lut_param(n));
                acc += std::llround(v / q.acc_lsb);
                if (acc > 32767) {
                    acc = 32767;
                    ++result.saturations;
                } else if (acc < -32768) {
                    acc = -32768;
                    ++result.saturations;
                }
            }
            double y = static_cast<double>(acc) * q.acc_lsb;
            if (requant) y = dequantize(quantize(y, *requant), *requant);
            result.output(o, j) = y;
        }
    }
    return result;
}

PrototypeBank dequantized_bank(const QuantizedRuntime& q) {
    PrototypeBank bank(q.layout.n_s, q.n_p, q.layout.l_s);
    const std::size_t per = q.n_p * q.layout.l_s;
    for (std::size_t i = 0; i < bank.values.size(); ++i) bank.values[i] = dequantize(q.proto_codes[i], q.proto_param(i / per));
    return bank;
}

LutPQ dequantized_lut(const QuantizedRuntime& q) {
    LutPQ lut(q.c_out, q.layout.n_s, q.n_p);
    for (std::size_t o = 0; o < q.c_out; ++o) {
        for (std::size_t n = 0; n < q.layout.n_s; ++n) {
            for (std::size_t p = 0; p < q.n_p; ++p) lut.at(o, n, p) = dequantize(q.lut_codes[(o * q.layout.n_s + n) * q.n_p + p], q.lut_param(n));
        }
    }
    return lut;
}

}  // namespace pqa
