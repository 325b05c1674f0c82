#include "pqa/core.hpp"

#include <cmath>
#include <sstream>

#include "pqa/errors.hpp"

namespace pqa {

std::string_view to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv: return "conv";
        case LayerKind::pointwise: return "pointwise";
        case LayerKind::depthwise: return "depthwise";
        case LayerKind::linear: return "linear";
    }
    return "conv";
}

std::string_view to_string(Metric metric) {
    return metric == Metric::l1 ? "l1" : "l2_squared";
}

std::string_view to_string(Activation act) {
    return act == Activation::relu ? "relu" : "none";
}

LayerKind parse_layer_kind(std::string_view text) {
    if (text == "conv") return LayerKind::conv;
    if (text == "pointwise") return LayerKind::pointwise;
    if (text == "depthwise") return LayerKind::depthwise;
    if (text == "linear") return LayerKind::linear;
    throw ParseError("unknown layer kind '" + std::string(text) + "'");
}

Metric parse_metric(std::string_view text) {
    if (text == "l2_squared" || text == "l2") return Metric::l2_squared;
    if (text == "l1") return Metric::l1;
    throw ParseError("unknown distance metric '" + std::string(text) + "'");
}

Activation parse_activation(std::string_view text) {
    if (text == "relu") return Activation::relu;
    if (text == "none") return Activation::none;
    throw ParseError("unknown activation '" + std::string(text) + "'");
}

void validate(const LayerSpec& layer) {
    auto fail = [&](const std::string& what) {
        throw ShapeError("layer '" + layer.name + "': " + what);
    };
    if (layer.c_in == 0 || layer.c_out == 0 || layer.k_h == 0 || layer.k_w == 0 || layer.stride == 0 ||
        layer.groups == 0 || layer.in_h == 0 || layer.in_w == 0) {
        fail("all counts must be >= 1");
    }
    if (layer.c_in % layer.groups != 0) fail("c_in not divisible by groups");
    if (layer.c_out % layer.groups != 0) fail("c_out not divisible by groups");
    if (layer.kind == LayerKind::depthwise && !(layer.groups == layer.c_in && layer.c_in == layer.c_out)) {
        fail("depthwise layers need groups == c_in == c_out");
    }
    if (layer.kind == LayerKind::pointwise && (layer.k_h != 1 || layer.k_w != 1)) {
        fail("pointwise layers need a 1x1 kernel");
    }
    if (layer.kind == LayerKind::linear &&
        (layer.k_h != 1 || layer.k_w != 1 || layer.in_h != 1 || layer.in_w != 1 || layer.stride != 1 ||
         layer.groups != 1)) {
        fail("linear layers need 1x1 geometry, stride 1 and a single group");
    }
    if (layer.pq_enabled && layer.groups != 1) fail("PQ layers must have a single group");
}

void validate(const PQConfig& config) {
    if (config.n_p == 0) throw ArgumentError("n_p must be >= 1");
    if (config.l_s == 0) throw ArgumentError("l_s must be >= 1");
    if (!(config.tau > 0.0) || !std::isfinite(config.tau)) throw ArgumentError("tau must be a positive finite value");
}

UnrolledDims derive_unrolled_dims(const LayerSpec& layer) {
    validate(layer);
    UnrolledDims dims;
    dims.a = layer.k_h * layer.k_w * layer.c_in / layer.groups;
    dims.cols = layer.out_h() * layer.out_w();
    dims.c_out = layer.c_out;
    return dims;
}

SubspaceLayout subspace_layout(std::size_t a, std::size_t l_s) {
    if (a == 0 || l_s == 0) throw ArgumentError("subspace_layout needs a >= 1 and l_s >= 1");
    SubspaceLayout layout;
    layout.a = a;
    layout.l_s = l_s;
    layout.n_s = ceil_div(a, l_s);
    layout.pad = layout.n_s * l_s - a;
    return layout;
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        std::ostringstream msg;
        msg << "matrix data length " << data_.size() << " does not match " << rows_ << "x" << cols_;
        throw ShapeError(msg.str());
    }
}

bool Matrix::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void validate(const Model& model) {
    if (model.layers.empty()) throw ShapeError("model '" + model.name + "' has no layers");
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto& cur = model.layers[i];
        validate(cur.spec);
        if (cur.pq) validate(*cur.pq);
        if (i == 0) continue;
        const auto& prev = model.layers[i - 1].spec;
        const auto& spec = cur.spec;
        std::ostringstream msg;
        if (spec.c_in != prev.c_out) {
            msg << "layer '" << spec.name << "' expects " << spec.c_in << " input channels but '" << prev.name
                << "' produces " << prev.c_out;
            throw ShapeError(msg.str());
        }
        if (spec.kind != LayerKind::linear && (spec.in_h != prev.out_h() || spec.in_w != prev.out_w())) {
            msg << "layer '" << spec.name << "' expects a " << spec.in_h << "x" << spec.in_w << " input but '"
                << prev.name << "' produces " << prev.out_h() << "x" << prev.out_w();
            throw ShapeError(msg.str());
        }
    }
}

std::size_t dense_parameter_count(const LayerSpec& layer) {
    std::size_t weights = layer.c_out * layer.k_h * layer.k_w * (layer.c_in / layer.groups);
    return weights + (layer.bias ? layer.c_out : 0);
}

std::size_t dense_flops(const LayerSpec& layer) {
    return 2 * dense_parameter_count(layer) * layer.out_h() * layer.out_w();
}

}  // namespace pqa
