#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pqa/core.hpp"

namespace pqa {

/// Per-subspace prototype tables, indexed [subspace][prototype][element].
struct PrototypeBank {
    std::size_t n_s = 0;
    std::size_t n_p = 0;
    std::size_t l_s = 0;
    std::vector<double> values;

    PrototypeBank() = default;
    PrototypeBank(std::size_t subspaces, std::size_t prototypes, std::size_t length, double fill = 0.0)
        : n_s(subspaces), n_p(prototypes), l_s(length), values(subspaces * prototypes * length, fill) {}

    std::span<const double> prototype(std::size_t n, std::size_t p) const {
        return {values.data() + (n * n_p + p) * l_s, l_s};
    }
    std::span<double> prototype(std::size_t n, std::size_t p) { return {values.data() + (n * n_p + p) * l_s, l_s}; }

    bool operator==(const PrototypeBank&) const = default;
};

/// Pre-computed dot products between weight sub-rows and prototypes,
/// indexed [out_channel][subspace][prototype].
struct LutPQ {
    std::size_t c_out = 0;
    std::size_t n_s = 0;
    std::size_t n_p = 0;
    std::vector<double> values;

    LutPQ() = default;
    LutPQ(std::size_t outputs, std::size_t subspaces, std::size_t prototypes, double fill = 0.0)
        : c_out(outputs), n_s(subspaces), n_p(prototypes), values(outputs * subspaces * prototypes, fill) {}

    double& at(std::size_t o, std::size_t n, std::size_t p) { return values[(o * n_s + n) * n_p + p]; }
    double at(std::size_t o, std::size_t n, std::size_t p) const { return values[(o * n_s + n) * n_p + p]; }

    bool operator==(const LutPQ&) const = default;
};

struct EncodingResult {
    std::size_t n_s = 0;
    std::size_t n_p = 0;
    std::size_t cols = 0;
    std::vector<std::uint32_t> indices;  // [subspace][column]
    // Soft path only: encoded input with the dimensions of the unrolled input.
    std::optional<Matrix> soft_matrix;
    // [subspace][column][prototype]
    std::optional<std::vector<double>> distances;
    // Soft path only: softmax weights, same layout as distances.
    std::optional<std::vector<double>> weights;

    std::uint32_t index(std::size_t n, std::size_t j) const { return indices[n * cols + j]; }
};

/// im2col lowering with "same" zero padding. For grouped layers the result
/// stacks one A x cols block per group. Rows within a block are ordered
/// (kernel row, kernel column, channel).
Matrix unroll_im2col(const Tensor3& input, const LayerSpec& layer);

/// Reorders weights stored as [c_out][c_in / groups][k_h][k_w] into the
/// c_out x A matrix matching unroll_im2col's row order.
Matrix unroll_weights(std::span<const double> weights, const LayerSpec& layer);

/// Inverse of the column layout: c_out x cols -> c_out x out_h x out_w.
Tensor3 roll_output(const Matrix& output, const LayerSpec& layer);

/// Subspace n of column j, zero-filled past the last real row.
void gather_subvector(const Matrix& x, const SubspaceLayout& layout, std::size_t n, std::size_t j,
                      std::span<double> out);

double distance(std::span<const double> x, std::span<const double> b, Metric metric);

std::vector<double> compute_distances(std::span<const double> x_sub, const PrototypeBank& bank, std::size_t n,
                                      Metric metric);

/// Nearest prototype per subspace and column; ties go to the lowest index.
EncodingResult encode_hard(const Matrix& x, const PrototypeBank& bank, const SubspaceLayout& layout, Metric metric,
                           bool keep_distances = false);

/// Temperature softmax over negated distances: weights_p ∝ exp(-d_p / tau).
EncodingResult encode_soft(const Matrix& x, const PrototypeBank& bank, const SubspaceLayout& layout, Metric metric,
                           double tau);

enum class InitMethod { kmeans_plus_plus, random_samples };
enum class FitStatus { ok, too_few_samples };

struct FitOptions {
    std::size_t max_iters = 25;
    std::uint64_t seed = 0;
    InitMethod init = InitMethod::kmeans_plus_plus;
};

struct FitResult {
    PrototypeBank bank;
    FitStatus status = FitStatus::ok;
    std::size_t iterations = 0;
    double mse_enc = 0.0;
    // Encoding MSE of each subspace, starting with the initial centroids.
    std::vector<std::vector<double>> mse_history;
};

/// Lloyd's k-means per subspace on the sample columns (always squared L2,
/// since the objective is the encoding MSE).
FitResult fit_prototypes(const Matrix& samples, const PQConfig& config, const SubspaceLayout& layout,
                         const FitOptions& options = {});

LutPQ build_lut(const Matrix& weights, const PrototypeBank& bank, const SubspaceLayout& layout);

/// Re-solves the LUT from one-hot occupancy features so that lookups best
/// reproduce target_outputs (c_out x cols of `encoding`). The ridge term pulls
/// entries toward the current table, so unoccupied cells keep their values.
LutPQ refit_lut(const LutPQ& lut, const EncodingResult& encoding, const Matrix& target_outputs, double ridge);

/// Two-layer perceptron: correction = W2 * tanh(W1 * norm(d) + b1) + b2.
struct Corrector {
    std::size_t in_dim = 0;
    std::size_t hidden = 0;
    std::size_t out_dim = 0;
    std::vector<double> w1;  // hidden x in_dim
    std::vector<double> b1;
    std::vector<double> w2;  // out_dim x hidden
    std::vector<double> b2;
    std::vector<double> in_mean;
    std::vector<double> in_scale;

    std::size_t parameter_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }
    /// Multiply-adds of one forward pass, dominated by in_dim * hidden.
    std::size_t flops() const { return 2 * (in_dim * hidden + hidden * out_dim); }
};

struct CorrectorOptions {
    double lr = 0.05;
    std::size_t epochs = 200;
    std::size_t batch_size = 0;  // 0 = full batch
    std::uint64_t seed = 0;
};

struct CorrectorFit {
    Corrector corrector;
    // Full-set loss before training and after every epoch.
    std::vector<double> loss_history;
    std::size_t best_epoch = 0;
};

/// Distances of each column flattened into rows: cols x (n_s * n_p).
Matrix distance_features(const EncodingResult& encoding);

/// Trains on rows of `features` against rows of `residuals` (samples x c_out)
/// and returns the parameters with the lowest full-set loss seen, which
/// includes the zero-output starting point.
CorrectorFit fit_corrector(const Matrix& features, const Matrix& residuals, std::size_t hidden_dim,
                           const CorrectorOptions& options = {});

std::vector<double> apply_corrector(const Corrector& corrector, std::span<const double> features);

/// Mean squared error over all samples and outputs, and its gradient with
/// respect to the flattened parameters (w1, b1, w2, b2).
struct CorrectorLoss {
    double loss = 0.0;
    std::vector<double> gradient;
};
CorrectorLoss corrector_loss(const Corrector& corrector, const Matrix& features, const Matrix& residuals);
std::vector<double> flatten_parameters(const Corrector& corrector);
void assign_parameters(Corrector& corrector, std::span<const double> params);

}  // namespace pqa
