#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pqa {

enum class LayerKind { conv, pointwise, depthwise, linear };
enum class Metric { l2_squared, l1 };
enum class Activation { none, relu };

std::string_view to_string(LayerKind kind);
std::string_view to_string(Metric metric);
std::string_view to_string(Activation act);
LayerKind parse_layer_kind(std::string_view text);
Metric parse_metric(std::string_view text);
Activation parse_activation(std::string_view text);

/// Geometry of one network layer. Convolutions use "same" zero padding, so the
/// output plane is ceil(in_h / stride) x ceil(in_w / stride). Linear layers
/// take c_in features and have in_h == in_w == 1.
struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::conv;
    std::size_t c_in = 1;
    std::size_t c_out = 1;
    std::size_t k_h = 1;
    std::size_t k_w = 1;
    std::size_t stride = 1;
    std::size_t groups = 1;
    std::size_t in_h = 1;
    std::size_t in_w = 1;
    bool pq_enabled = false;
    // Only used for parameter and FLOP accounting of dense layers.
    bool bias = false;

    std::size_t out_h() const { return (in_h + stride - 1) / stride; }
    std::size_t out_w() const { return (in_w + stride - 1) / stride; }

    bool operator==(const LayerSpec&) const = default;
};

/// Throws ShapeError when the layer violates its invariants.
void validate(const LayerSpec& layer);

struct UnrolledDims {
    std::size_t a = 1;     // rows of the unrolled input: k_h * k_w * c_in / groups
    std::size_t cols = 1;  // output spatial positions
    std::size_t c_out = 1;

    bool operator==(const UnrolledDims&) const = default;
};

struct PQConfig {
    std::size_t n_p = 16;
    std::size_t l_s = 9;
    Metric metric = Metric::l2_squared;
    double tau = 1.0;

    bool operator==(const PQConfig&) const = default;
};

void validate(const PQConfig& config);

struct SubspaceLayout {
    std::size_t a = 1;
    std::size_t l_s = 1;
    std::size_t n_s = 1;
    std::size_t pad = 0;  // zero-filled tail positions: n_s * l_s - a

    std::size_t padded_rows() const { return n_s * l_s; }

    bool operator==(const SubspaceLayout&) const = default;
};

UnrolledDims derive_unrolled_dims(const LayerSpec& layer);
SubspaceLayout subspace_layout(std::size_t a, std::size_t l_s);

/// Dense row-major matrix of finite doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }
    std::vector<double> release() && { return std::move(data_); }

    bool all_finite() const;

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Channel-major C x H x W activation tensor for a single sample.
struct Tensor3 {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> data;

    Tensor3() = default;
    Tensor3(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
        : channels(c), height(h), width(w), data(c * h * w, fill) {}

    double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
    double at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }

    bool operator==(const Tensor3&) const = default;
};

/// A layer in a model description, with its optional PQ parameters.
struct ModelLayer {
    LayerSpec spec;
    std::optional<PQConfig> pq;
    Activation activation = Activation::none;

    bool operator==(const ModelLayer&) const = default;
};

struct Model {
    std::string name;
    std::vector<ModelLayer> layers;

    bool operator==(const Model&) const = default;
};

/// Checks every layer and that consecutive layers chain (channels and spatial
/// sizes). Linear layers accept any spatial size: the input is globally
/// average pooled first.
void validate(const Model& model);

/// Weight count of a dense layer (c_out * a, plus c_out when it has a bias).
std::size_t dense_parameter_count(const LayerSpec& layer);

/// Dense FLOPs: 2 * parameters * output positions.
std::size_t dense_flops(const LayerSpec& layer);

inline std::size_t ceil_div(std::size_t num, std::size_t den) { return (num + den - 1) / den; }

}  // namespace pqa
