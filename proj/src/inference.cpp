#include "pqa/inference.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pqa/errors.hpp"

namespace pqa {

void validate(const PQLayerRuntime& rt) {
    validate(rt.layer);
    validate(rt.config);
    const auto dims = derive_unrolled_dims(rt.layer);
    auto fail = [&](const std::string& what) { throw ShapeError("PQ layer '" + rt.layer.name + "': " + what); };
    if (rt.layout != subspace_layout(dims.a, rt.config.l_s)) fail("subspace layout does not match the layer");
    if (rt.bank.n_s != rt.layout.n_s || rt.bank.l_s != rt.layout.l_s || rt.bank.n_p != rt.config.n_p) {
        fail("prototype bank dimensions do not match");
    }
    if (rt.bank.values.size() != rt.bank.n_s * rt.bank.n_p * rt.bank.l_s) fail("prototype bank storage size");
    if (rt.lut.c_out != rt.layer.c_out || rt.lut.n_s != rt.layout.n_s || rt.lut.n_p != rt.config.n_p) {
        fail("LUT dimensions do not match");
    }
    if (rt.lut.values.size() != rt.lut.c_out * rt.lut.n_s * rt.lut.n_p) fail("LUT storage size");
    if (rt.corrector) {
        if (rt.corrector->in_dim != rt.layout.n_s * rt.config.n_p || rt.corrector->out_dim != rt.layer.c_out) {
            fail("corrector dimensions do not match");
        }
    }
}

PQLayerRuntime make_runtime(const LayerSpec& layer, const PQConfig& config, PrototypeBank bank, LutPQ lut) {
    PQLayerRuntime rt;
    rt.layer = layer;
    rt.config = config;
    rt.layout = subspace_layout(derive_unrolled_dims(layer).a, config.l_s);
    rt.bank = std::move(bank);
    rt.lut = std::move(lut);
    validate(rt);
    return rt;
}

Matrix pq_forward(const EncodingResult& enc, const PQLayerRuntime& rt) {
    if (enc.n_s != rt.lut.n_s || enc.n_p != rt.lut.n_p) throw ShapeError("pq_forward: encoding does not match LUT");
    Matrix out(rt.lut.c_out, enc.cols);
    for (std::size_t o = 0; o < rt.lut.c_out; ++o) {
        for (std::size_t j = 0; j < enc.cols; ++j) {
            double acc = 0.0;
            for (std::size_t n = 0; n < enc.n_s; ++n) acc += rt.lut.at(o, n, enc.index(n, j));
            out(o, j) = acc;
        }
    }
    if (rt.corrector) {
        const Matrix features = distance_features(enc);
        for (std::size_t j = 0; j < enc.cols; ++j) {
            const auto corr = apply_corrector(*rt.corrector, features.row(j));
            for (std::size_t o = 0; o < rt.lut.c_out; ++o) out(o, j) += corr[o];
        }
    }
    return out;
}

Matrix pq_forward(const Matrix& input_unrolled, const PQLayerRuntime& rt) {
    const auto enc =
        encode_hard(input_unrolled, rt.bank, rt.layout, rt.config.metric, rt.corrector.has_value());
    return pq_forward(enc, rt);
}

Matrix reference_forward(const Matrix& input_unrolled, const Matrix& weights_unrolled) {
    if (weights_unrolled.cols() != input_unrolled.rows()) {
        std::ostringstream msg;
        msg << "reference_forward: weights are " << weights_unrolled.rows() << "x" << weights_unrolled.cols()
            << " but input has " << input_unrolled.rows() << " rows";
        throw ShapeError(msg.str());
    }
    const std::size_t inner = input_unrolled.rows();
    Matrix out(weights_unrolled.rows(), input_unrolled.cols());
    std::vector<long double> acc(input_unrolled.cols());
    for (std::size_t o = 0; o < weights_unrolled.rows(); ++o) {
        std::fill(acc.begin(), acc.end(), 0.0L);
        for (std::size_t k = 0; k < inner; ++k) {
            const long double w = weights_unrolled(o, k);
            if (w == 0.0L) continue;
            const auto xrow = input_unrolled.row(k);
            for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += w * xrow[j];
        }
        for (std::size_t j = 0; j < acc.size(); ++j) out(o, j) = static_cast<double>(acc[j]);
    }
    return out;
}

Matrix grouped_reference_forward(const Matrix& input_unrolled, const Matrix& weights_unrolled, std::size_t groups) {
    if (groups <= 1) return reference_forward(input_unrolled, weights_unrolled);
    const std::size_t a = weights_unrolled.cols();
    if (input_unrolled.rows() != a * groups || weights_unrolled.rows() % groups != 0) {
        throw ShapeError("grouped_reference_forward: input/weight shapes do not match the group count");
    }
    const std::size_t per_group = weights_unrolled.rows() / groups;
    const std::size_t cols = input_unrolled.cols();
    Matrix out(weights_unrolled.rows(), cols);
    for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t oo = 0; oo < per_group; ++oo) {
            const std::size_t o = g * per_group + oo;
            for (std::size_t j = 0; j < cols; ++j) {
                long double acc = 0.0L;
                for (std::size_t k = 0; k < a; ++k) {
                    acc += static_cast<long double>(weights_unrolled(o, k)) * input_unrolled(g * a + k, j);
                }
                out(o, j) = static_cast<double>(acc);
            }
        }
    }
    return out;
}

ErrorReport error_report(const Matrix& y_pq, const Matrix& y_ref, const Matrix* x_enc, const Matrix* x) {
    if (y_pq.rows() != y_ref.rows() || y_pq.cols() != y_ref.cols()) throw ShapeError("error_report: output shapes differ");
    ErrorReport report;
    long double sq = 0.0L;
    for (std::size_t i = 0; i < y_pq.size(); ++i) {
        const double d = y_pq.data()[i] - y_ref.data()[i];
        sq += static_cast<long double>(d) * d;
        report.max_abs_err = std::max(report.max_abs_err, std::abs(d));
    }
    if (y_pq.size() > 0) report.mse_out = static_cast<double>(sq / static_cast<long double>(y_pq.size()));
    if (x_enc && x) {
        if (x_enc->rows() != x->rows() || x_enc->cols() != x->cols()) {
            throw ShapeError("error_report: encoded input shape differs from input");
        }
        long double esq = 0.0L;
        for (std::size_t i = 0; i < x->size(); ++i) {
            const double d = x_enc->data()[i] - x->data()[i];
            esq += static_cast<long double>(d) * d;
        }
        if (x->size() > 0) report.mse_enc = static_cast<double>(esq / static_cast<long double>(x->size()));
    }
    return report;
}

Matrix reconstruct_input(const EncodingResult& enc, const PrototypeBank& bank, const SubspaceLayout& layout) {
    Matrix x(layout.a, enc.cols);
    for (std::size_t n = 0; n < enc.n_s; ++n) {
        for (std::size_t j = 0; j < enc.cols; ++j) {
            const auto proto = bank.prototype(n, enc.index(n, j));
            for (std::size_t k = 0; k < layout.l_s; ++k) {
                const std::size_t r = n * layout.l_s + k;
                if (r < layout.a) x(r, j) = proto[k];
            }
        }
    }
    return x;
}

void apply_activation(Matrix& m, Activation act) {
    if (act != Activation::relu) return;
    for (double& v : m.data()) v = std::max(v, 0.0);
}

Tensor3 layer_input_for(const Tensor3& activation, const LayerSpec& spec) {
    if (spec.kind != LayerKind::linear || (activation.height == 1 && activation.width == 1)) return activation;
    Tensor3 pooled(activation.channels, 1, 1);
    const double plane = static_cast<double>(activation.height * activation.width);
    for (std::size_t c = 0; c < activation.channels; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < activation.height * activation.width; ++i) {
            acc += activation.data[c * activation.height * activation.width + i];
        }
        pooled.at(c, 0, 0) = acc / plane;
    }
    return pooled;
}

namespace {

void add_bias(Matrix& y, const NetworkLayer& layer) {
    if (layer.bias.empty()) return;
    if (layer.bias.size() != layer.spec.c_out) throw ShapeError("layer '" + layer.spec.name + "': bias length");
    for (std::size_t o = 0; o < y.rows(); ++o) {
        for (double& v : y.row(o)) v += layer.bias[o];
    }
}

Matrix dense_from_unrolled(const Matrix& x, const NetworkLayer& layer) {
    Matrix y = grouped_reference_forward(x, layer.weights, layer.spec.groups);
    add_bias(y, layer);
    return y;
}

}  // namespace

Matrix dense_layer_forward(const Tensor3& layer_input, const NetworkLayer& layer) {
    return dense_from_unrolled(unroll_im2col(layer_input, layer.spec), layer);
}

std::vector<double> network_forward(const Tensor3& input, const std::vector<NetworkLayer>& layers,
                                    std::vector<LayerTrace>* trace) {
    if (layers.empty()) throw ShapeError("network_forward: no layers");
    if (trace) trace->clear();
    Tensor3 act = input;
    for (const auto& layer : layers) {
        const auto& spec = layer.spec;
        Tensor3 in = layer_input_for(act, spec);
        if (in.channels != spec.c_in || in.height != spec.in_h || in.width != spec.in_w) {
            std::ostringstream msg;
            msg << "network_forward: layer '" << spec.name << "' expects " << spec.c_in << "x" << spec.in_h << "x"
                << spec.in_w << " but receives " << in.channels << "x" << in.height << "x" << in.width;
            throw ShapeError(msg.str());
        }
        Matrix x = unroll_im2col(in, spec);
        Matrix y;
        if (layer.pq) {
            y = pq_forward(x, *layer.pq);
            add_bias(y, layer);
        } else {
            const auto expected_a = derive_unrolled_dims(spec).a;
            if (layer.weights.rows() != spec.c_out || layer.weights.cols() != expected_a) {
                throw ShapeError("network_forward: layer '" + spec.name + "' has no matching dense weights");
            }
            y = dense_from_unrolled(x, layer);
        }
        if (trace) trace->push_back({in, x, y});
        apply_activation(y, layer.activation);
        act = roll_output(y, spec);
    }
    return act.data;
}

}  // namespace pqa
