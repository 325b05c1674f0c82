#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pqa/core.hpp"

namespace pqa {

/// Binary tensor container: "PQT1", version, dtype, rank (u32), dims (u32 each),
/// then the row-major payload. Every multi-byte field is little-endian.
enum class DType : std::uint8_t { real32 = 0, int32 = 1, uint8 = 2, real64 = 3 };

inline constexpr std::uint8_t kTensorVersion = 1;

std::size_t element_size(DType dtype);
std::string_view to_string(DType dtype);

struct TensorFile {
    DType dtype = DType::real64;
    std::vector<std::uint32_t> dims;  // empty = scalar
    std::vector<std::uint8_t> payload;  // raw little-endian elements

    std::size_t element_count() const;
    bool operator==(const TensorFile&) const = default;
};

/// Converts values to the dtype; integer dtypes require integral in-range values.
TensorFile make_tensor(DType dtype, std::vector<std::uint32_t> dims, std::span<const double> values);
std::vector<double> tensor_values(const TensorFile& t);

std::vector<std::uint8_t> serialize(const TensorFile& t);
TensorFile deserialize(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>");

void write_tensor(const std::filesystem::path& path, const TensorFile& t);
TensorFile read_tensor(const std::filesystem::path& path);

/// Model description as JSON. Unknown keys are rejected.
Model parse_model_json(const std::string& text, const std::string& origin = "<memory>");
std::string model_to_json(const Model& model);
Model load_model(const std::filesystem::path& path);

std::vector<std::string> zoo_names();
/// "dw_emnist", "micronet_kws" or "resnet20"; layers carry no PQ configuration.
Model zoo_model(const std::string& name);

/// Zoo name or path to a model JSON file.
Model resolve_model(const std::string& name_or_path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

std::string format_real(double v);

}  // namespace pqa
