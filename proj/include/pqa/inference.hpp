#pragma once

#include <optional>
#include <vector>

#include "pqa/core.hpp"
#include "pqa/encoder.hpp"

namespace pqa {

/// Everything a deployed PQ layer needs: prototypes and the lookup table.
struct PQLayerRuntime {
    LayerSpec layer;
    PQConfig config;
    SubspaceLayout layout;
    PrototypeBank bank;
    LutPQ lut;
    std::optional<Corrector> corrector;
};

/// Throws ShapeError when bank, table, layout and layer disagree.
void validate(const PQLayerRuntime& rt);

PQLayerRuntime make_runtime(const LayerSpec& layer, const PQConfig& config, PrototypeBank bank, LutPQ lut);

struct ErrorReport {
    double mse_enc = 0.0;
    double mse_out = 0.0;
    double max_abs_err = 0.0;
};

/// Lookup-and-accumulate execution: out[o][j] = sum_n lut[o][n][idx[n][j]],
/// summed in ascending subspace order.
Matrix pq_forward(const Matrix& input_unrolled, const PQLayerRuntime& rt);

/// Same as pq_forward but reuses a precomputed encoding.
Matrix pq_forward(const EncodingResult& encoding, const PQLayerRuntime& rt);

/// Exact product weights (c_out x a) * input (a x cols) with long double accumulation.
Matrix reference_forward(const Matrix& input_unrolled, const Matrix& weights_unrolled);

/// Grouped dense convolution: input has one A x cols block per group.
Matrix grouped_reference_forward(const Matrix& input_unrolled, const Matrix& weights_unrolled, std::size_t groups);

/// x_enc / x are optional; when both are given mse_enc compares them.
ErrorReport error_report(const Matrix& y_pq, const Matrix& y_ref, const Matrix* x_enc = nullptr,
                         const Matrix* x = nullptr);

/// Encoded input rebuilt from prototypes (the hard-encoding counterpart of X^enc).
Matrix reconstruct_input(const EncodingResult& encoding, const PrototypeBank& bank, const SubspaceLayout& layout);

/// One step of a network: dense weights are used unless a PQ runtime is given.
struct NetworkLayer {
    LayerSpec spec;
    Matrix weights;  // c_out x a (unrolled)
    std::vector<double> bias;  // empty or c_out
    std::optional<PQLayerRuntime> pq;
    Activation activation = Activation::none;
};

/// Per-layer input (before im2col) and output captured during a forward pass.
struct LayerTrace {
    Tensor3 input;
    Matrix unrolled;
    Matrix output;  // before the activation
};

/// Linear layers average-pool any spatial extent of their input first.
Tensor3 layer_input_for(const Tensor3& activation, const LayerSpec& spec);

/// Runs the layers in order; PQ layers go through pq_forward, others through
/// reference_forward. Returns the flattened output of the last layer.
std::vector<double> network_forward(const Tensor3& input, const std::vector<NetworkLayer>& layers,
                                    std::vector<LayerTrace>* trace = nullptr);

/// Dense-only forward of a single layer on an already prepared input tensor.
Matrix dense_layer_forward(const Tensor3& layer_input, const NetworkLayer& layer);

void apply_activation(Matrix& m, Activation act);

}  // namespace pqa
