#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pqa/core.hpp"
#include "pqa/inference.hpp"

namespace pqa {

enum class Granularity { global, per_layer, per_subspace };
enum class CalibrationKind { full_range, percentile };

std::string_view to_string(Granularity g);
std::string_view to_string(CalibrationKind c);
Granularity parse_granularity(std::string_view text);
CalibrationKind parse_calibration(std::string_view text);

struct Calibration {
    CalibrationKind kind = CalibrationKind::full_range;
    double lo_pct = 30.0;
    double hi_pct = 70.0;

    bool operator==(const Calibration&) const = default;
};

/// Unsigned affine code: value = (code - zero_point) * scale, code in [0, 2^bits - 1].
/// The zero point may sit outside the code range when the calibrated range
/// excludes zero.
struct QuantParams {
    double scale = 1.0;
    std::int64_t zero_point = 0;
    unsigned bits = 8;
    double lo = 0.0;  // calibrated range
    double hi = 0.0;

    std::uint32_t code_max() const { return (std::uint32_t{1} << bits) - 1; }
    /// Worst-case round-trip error for values inside [lo, hi].
    double max_round_trip_error() const { return scale / 2.0; }
};

struct QuantScheme {
    Granularity granularity = Granularity::per_subspace;
    Calibration calibration;
    unsigned proto_bits = 16;
    unsigned lut_bits = 16;

    bool operator==(const QuantScheme&) const = default;
};

void validate(const QuantScheme& scheme);
void validate_bits(unsigned bits);

/// Linear interpolation between order statistics (pct in [0, 100]).
double percentile(std::vector<double> values, double pct);

QuantParams calibrate(std::span<const double> values, unsigned bits, const Calibration& calibration = {});
std::uint32_t quantize(double x, const QuantParams& p);
double dequantize(std::uint32_t code, const QuantParams& p);

inline constexpr unsigned kAccumulatorBits = 16;

struct QuantizedRuntime {
    std::string layer_name;
    SubspaceLayout layout;
    std::size_t n_p = 0;
    std::size_t c_out = 0;
    Metric metric = Metric::l2_squared;
    Granularity granularity = Granularity::per_subspace;

    // Prototypes and incoming inputs share these parameters.
    std::vector<QuantParams> proto_params;  // one, or one per subspace
    std::vector<std::uint32_t> proto_codes;  // [subspace][prototype][element]
    std::vector<QuantParams> lut_params;
    std::vector<std::uint32_t> lut_codes;  // [out][subspace][prototype]
    std::vector<double> lut_max_error;  // per subspace, largest |dequantized - float| entry

    // Signed 16-bit saturating accumulator with this resolution (a power of two).
    double acc_lsb = 1.0;

    const QuantParams& proto_param(std::size_t n) const { return proto_params.size() == 1 ? proto_params[0] : proto_params[n]; }
    const QuantParams& lut_param(std::size_t n) const { return lut_params.size() == 1 ? lut_params[0] : lut_params[n]; }

    double acc_min() const { return -32768.0 * acc_lsb; }
    double acc_max() const { return 32767.0 * acc_lsb; }

    /// Largest deviation from the float lookup sum when the quantized and float
    /// encodings pick the same prototypes and nothing saturates.
    double lookup_error_bound() const;
};

/// Quantizes several PQ layers at once. Global granularity pools the values of
/// all of them; `calib_inputs[i]` are unrolled inputs of layer i (may be empty
/// matrices, then only the prototypes set the input range).
std::vector<QuantizedRuntime> quantize_runtimes(std::span<const PQLayerRuntime> runtimes, const QuantScheme& scheme,
                                                std::span<const Matrix> calib_inputs);

QuantizedRuntime quantize_runtime(const PQLayerRuntime& rt, const QuantScheme& scheme, const Matrix& calib_inputs);

struct QuantForwardResult {
    Matrix output;
    std::vector<std::uint32_t> indices;  // [subspace][column]
    std::size_t saturations = 0;
};

/// Integer-domain encoding followed by dequantized lookups accumulated in the
/// 16-bit fixed-point accumulator. With `requant`, outputs are stored through
/// the next layer's input quantizer.
QuantForwardResult quantized_pq_forward(const Matrix& input_unrolled, const QuantizedRuntime& q,
                                        const std::optional<QuantParams>& requant = std::nullopt);

/// Dequantized copies of the stored prototypes / table (for inspection and tests).
PrototypeBank dequantized_bank(const QuantizedRuntime& q);
LutPQ dequantized_lut(const QuantizedRuntime& q);

}  // namespace pqa
