#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pqa/core.hpp"
#include "pqa/encoder.hpp"
#include "pqa/inference.hpp"
#include "pqa/io.hpp"
#include "pqa/perfmodel.hpp"
#include "pqa/quantizer.hpp"

namespace pqa {

struct FitSettings {
    std::size_t max_iters = 25;
    std::size_t max_columns = 4096;  // per PQ layer, spread evenly over all samples
    std::optional<double> ridge;      // LUT refit when set
    std::size_t corrector_hidden = 0;  // 0 = no corrector
    std::size_t corrector_epochs = 200;
    double corrector_lr = 0.05;

    bool operator==(const FitSettings&) const = default;
};

/// Everything a command can be configured with. A JSON config file overrides
/// the defaults and command-line flags override the file.
struct RunConfig {
    HwConfig hw;
    MemorySpec memory;
    std::optional<QuantScheme> quant;
    std::optional<PQConfig> pq;  // applied to PQ-enabled layers without their own
    std::uint64_t seed = 0;
    FitSettings fit;
    std::optional<double> baseline_cycles;
    std::string out_dir = "pqa_out";

    bool operator==(const RunConfig&) const = default;
};

/// Applies the keys present in `text` on top of `base`; unknown keys are rejected.
RunConfig parse_run_config(const std::string& text, RunConfig base = {}, const std::string& origin = "<config>");
std::string run_config_to_json(const RunConfig& config);

/// HwConfig with the bandwidth of the selected memory.
HwConfig effective_hw(const RunConfig& config);

/// Model with `config.pq` filled in where a PQ-enabled layer has none.
Model apply_pq_defaults(Model model, const RunConfig& config);

struct LayerWeights {
    Matrix weights;  // c_out x a, columns in unroll_im2col row order
    std::vector<double> bias;
};

/// Deterministic He-uniform weights and small biases for every layer.
std::vector<LayerWeights> init_weights(const Model& model, std::uint64_t seed);

/// A batch of input samples read from an [N, C, H, W] or [C, H, W] tensor.
std::vector<Tensor3> load_samples(const std::filesystem::path& path);
std::vector<Tensor3> samples_from_tensor(const TensorFile& t);
/// Throws ShapeError naming the first layer when a sample does not fit it.
void check_samples(const Model& model, const std::vector<Tensor3>& samples);

/// File name stem for a layer ("Block1-Conv1" -> "Block1-Conv1", unsafe characters replaced).
std::string artifact_stem(const std::string& layer_name);

std::vector<NetworkLayer> dense_network(const Model& model, const std::vector<LayerWeights>& weights);

/// Unrolled inputs of every layer for all samples, concatenated along columns,
/// from the dense network.
std::vector<Matrix> collect_layer_inputs(const std::vector<NetworkLayer>& net, const std::vector<Tensor3>& samples,
                                         std::size_t max_columns = 0);

/// Evenly spaced subset of columns (all of them when max_columns is 0 or large enough).
Matrix subsample_columns(const Matrix& x, std::size_t max_columns);

struct FitLayerSummary {
    std::string name;
    std::size_t a = 0;
    std::size_t columns = 0;
    std::size_t n_s = 0;
    PQConfig pq;
    FitStatus status = FitStatus::ok;
    std::size_t iterations = 0;
    double mse_enc = 0.0;
    double mse_out = 0.0;
    std::optional<double> mse_out_refit;
    std::optional<double> mse_out_corrected;
};

struct FitOutcome {
    Model model;
    std::vector<LayerWeights> weights;
    std::vector<PQLayerRuntime> runtimes;
    std::vector<FitLayerSummary> layers;
    std::vector<std::string> warnings;
    std::vector<std::filesystem::path> written;
};

/// Fits prototypes and tables for every PQ layer. With a non-empty out_dir it
/// writes model.json, weights, banks, tables and fit_report.csv there.
FitOutcome cmd_fit(const Model& model, const std::vector<Tensor3>& samples, const RunConfig& config,
                   const std::optional<std::vector<LayerWeights>>& weights = std::nullopt);

std::string fit_report_csv(const std::vector<FitLayerSummary>& layers);

struct Artifacts {
    Model model;
    std::vector<LayerWeights> weights;
    std::vector<std::optional<PQLayerRuntime>> runtimes;  // one per model layer
};

void save_artifacts(const std::filesystem::path& dir, const Artifacts& artifacts,
                    std::vector<std::filesystem::path>* written = nullptr);
Artifacts load_artifacts(const std::filesystem::path& dir);

std::vector<NetworkLayer> pq_network(const Artifacts& artifacts);

struct EvalLayerRow {
    std::string name;
    bool pq = false;
    double mse_enc = 0.0;
    double mse_out = 0.0;
    double max_abs_err = 0.0;
    // Quantized evaluation only.
    std::optional<double> quant_max_divergence;
    std::size_t quant_saturations = 0;
    std::size_t quant_index_mismatches = 0;
    std::optional<double> quant_bound;
};

struct EvalReport {
    std::vector<EvalLayerRow> layers;
    double end_to_end_mse = 0.0;
    double end_to_end_max_abs_err = 0.0;
    std::optional<double> quant_divergence;  // quantized vs float PQ network outputs
    std::optional<double> quant_bound;
    std::size_t quant_saturations = 0;
};

/// Per-layer errors on the dense network's inputs and end-to-end error of the
/// PQ network against the dense one. With a scheme, also runs the quantized
/// network next to the float PQ network and reports their divergence with a
/// bound propagated through the layers.
EvalReport cmd_eval(const Artifacts& artifacts, const std::vector<Tensor3>& samples,
                    const std::optional<QuantScheme>& scheme = std::nullopt);

std::string eval_report_csv(const EvalReport& report);

/// Quantizes the PQ layers of `artifacts`, calibrated on the dense network's
/// layer inputs for `samples`.
std::vector<QuantizedRuntime> quantize_artifacts(const Artifacts& artifacts, const std::vector<Tensor3>& samples,
                                                 const QuantScheme& scheme);

struct QuantNetworkResult {
    std::vector<double> float_output;
    std::vector<double> quant_output;
    std::vector<std::size_t> saturations;  // per model layer
    std::vector<std::size_t> index_mismatches;
    std::vector<double> layer_bound;  // bound on the layer's output divergence
    double bound = 0.0;  // on the final output
};

/// Runs the float PQ network and the quantized one side by side. `quantized`
/// holds one entry per PQ layer in model order.
QuantNetworkResult quantized_network_forward(const Tensor3& input, const std::vector<NetworkLayer>& net,
                                             const std::vector<QuantizedRuntime>& quantized);

/// Writes code tensors and quant_params.csv into dir.
void save_quantized(const std::filesystem::path& dir, const std::vector<QuantizedRuntime>& quantized,
                    std::vector<std::filesystem::path>* written = nullptr);
std::string quant_params_csv(const std::vector<QuantizedRuntime>& quantized);

struct SimulateReport {
    NetworkCycleReport cycles;
    double latency_us = 0.0;
    std::uint64_t params_lut_plus_dense = 0;
    std::uint64_t params_lut_plus_protos_plus_dense = 0;
    std::uint64_t dense_params = 0;
    std::optional<double> baseline_cycles;
    std::optional<double> speedup;
    MemorySpec memory;
    HwConfig hw;
};

SimulateReport cmd_simulate(const Model& model, const RunConfig& config);
std::string simulate_csv(const Model& model, const SimulateReport& report);
std::string simulate_summary(const Model& model, const SimulateReport& report);

/// Grid document: in_sizes, channels, n_p, l_s, memories, kernel, stride,
/// metric, hw and baseline. Missing keys fall back to the speedup heat-map grid.
SweepGrid parse_sweep_grid(const std::string& text, const std::string& origin = "<grid>");
std::vector<BaselineEntry> parse_baseline_csv(const std::string& text, const std::string& origin = "<baseline>");

std::string cmd_sweep(const SweepGrid& grid);

}  // namespace pqa
