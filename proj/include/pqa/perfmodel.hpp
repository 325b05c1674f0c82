#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pqa/core.hpp"

namespace pqa {

inline constexpr double kDdr4BytesPerS = 36e9;
inline constexpr double kHbmBytesPerS = 460e9;

enum class MemoryKind { ddr4, hbm, custom };

std::string_view to_string(MemoryKind kind);
MemoryKind parse_memory_kind(std::string_view text);

struct MemorySpec {
    MemoryKind kind = MemoryKind::hbm;
    double bytes_per_s = kHbmBytesPerS;

    std::string label() const;
    bool operator==(const MemorySpec&) const = default;
};

MemorySpec memory_spec(MemoryKind kind, double custom_bytes_per_s = 0.0);

struct HwConfig {
    std::size_t ls_vec = 16;
    std::size_t np_vec = 16;
    std::size_t ns_vec = 16;
    std::size_t nout_vec = 16;
    std::size_t ls_max = 64;
    std::size_t np_max = 128;
    std::size_t ns_max = 4096;
    std::size_t nout_max = 4096;
    std::size_t nin_max = 4096;
    double fmax_hz = 490e6;
    double mem_bw_bytes_per_s = kHbmBytesPerS;
    unsigned proto_bits = 16;
    unsigned lut_bits = 16;

    bool operator==(const HwConfig&) const = default;
};

/// Throws ArgumentError for zero counts, vec > max, or non-positive rates.
void validate(const HwConfig& hw);

std::uint64_t compute_cycles(const UnrolledDims& dims, const PQConfig& pq, const HwConfig& hw);

struct LoadBreakdown {
    std::uint64_t internal = 0;  // filling the banked LUT memories
    std::uint64_t external = 0;  // streaming prototypes and table from memory
    std::uint64_t bits = 0;
    std::uint64_t cycles() const { return internal > external ? internal : external; }
};

LoadBreakdown load_breakdown(const UnrolledDims& dims, const PQConfig& pq, const HwConfig& hw);
std::uint64_t load_cycles(const UnrolledDims& dims, const PQConfig& pq, const HwConfig& hw);

struct LayerCycleReport {
    std::uint64_t compute_cycles = 0;
    std::uint64_t load_cycles = 0;
    std::uint64_t total_cycles = 0;
    bool memory_bound = false;
    std::uint64_t bits_loaded = 0;

    bool operator==(const LayerCycleReport&) const = default;
};

LayerCycleReport layer_report(const UnrolledDims& dims, const PQConfig& pq, const HwConfig& hw);

struct NamedLayerReport {
    std::string name;
    UnrolledDims dims;
    PQConfig pq;
    std::size_t n_s = 0;
    LayerCycleReport report;
};

struct NetworkCycleReport {
    std::vector<NamedLayerReport> layers;  // PQ layers only
    std::uint64_t total_cycles = 0;
    std::uint64_t compute_cycles = 0;
    std::size_t memory_bound_layers = 0;
};

/// Sums the PQ layers; dense layers do not run on the PQ datapath.
NetworkCycleReport network_report(const Model& model, const HwConfig& hw);

double latency_us(std::uint64_t cycles, double fmax_hz);

struct FootprintReport {
    std::uint64_t flops_im2col = 0;
    std::uint64_t flops_pq = 0;
    std::uint64_t flops_enc = 0;
    std::uint64_t flops_add = 0;
    double ratio = 0.0;
    std::uint64_t lut_entries = 0;
    std::uint64_t proto_entries = 0;
    std::uint64_t params_pq = 0;

    bool operator==(const FootprintReport&) const = default;
};

/// Distance FLOPs per subspace and column: 3 Np Ls for squared L2, 2 Np Ls for L1.
std::uint64_t distance_flops(const PQConfig& pq);

FootprintReport flops_footprint(const UnrolledDims& dims, const PQConfig& pq);

/// 2 Cout Ls / (3 Np Ls + Cout): the savings ratio with N_s - 1 taken as N_s.
double flops_ratio_closed_form(std::size_t c_out, std::size_t n_p, std::size_t l_s);

/// 2 Ns Ls Cout / (3 Ns Np Ls + (Ns - 1) Cout), exact for unpadded layers.
double flops_ratio_exact(std::size_t n_s, std::size_t c_out, std::size_t n_p, std::size_t l_s);

enum class ParamConvention { lut_plus_dense, lut_plus_protos_plus_dense };

std::string_view to_string(ParamConvention c);
ParamConvention parse_param_convention(std::string_view text);

std::uint64_t memory_footprint(const Model& model, ParamConvention convention);

/// Dense parameters and FLOPs of the whole model, ignoring PQ settings.
std::uint64_t dense_parameters(const Model& model);
std::uint64_t dense_model_flops(const Model& model);

/// Returns a copy with `pq` attached to every pq_enabled layer.
Model with_uniform_pq(Model model, const PQConfig& pq);

double area_ealm(double alms, double dsps, double brams);

struct BaselineEntry {
    std::size_t in_size = 0;
    std::size_t channels = 0;
    double cycles = 0.0;
};

struct SweepGrid {
    std::vector<std::size_t> in_sizes;
    std::vector<std::size_t> channels;
    std::vector<std::size_t> n_ps;
    std::vector<std::size_t> l_ss;
    std::vector<MemorySpec> memories;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    Metric metric = Metric::l2_squared;
    HwConfig hw;  // mem_bw_bytes_per_s is replaced per memory
    std::vector<BaselineEntry> baseline;
};

/// Square inputs and kernels with c_in == c_out, as in the speedup heat maps.
SweepGrid heatmap_grid();

struct SweepRecord {
    std::size_t in_size = 0;
    std::size_t channels = 0;
    std::size_t kernel = 0;
    std::size_t n_p = 0;
    std::size_t l_s = 0;
    MemorySpec memory;
    UnrolledDims dims;
    std::size_t n_s = 0;
    LayerCycleReport cycles;
    FootprintReport footprint;
    std::optional<double> baseline_cycles;
    std::optional<double> speedup;
};

/// Ordered by (in_size, channels, n_p, l_s, memory) in the order given.
std::vector<SweepRecord> sweep(const SweepGrid& grid);

void write_sweep_csv(std::ostream& out, const std::vector<SweepRecord>& records);

}  // namespace pqa
