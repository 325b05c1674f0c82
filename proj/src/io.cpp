#include "pqa/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "pqa/errors.hpp"

namespace pqa {

using nlohmann::json;

std::size_t element_size(DType dtype) {
    switch (dtype) {
        case DType::real32: return 4;
        case DType::int32: return 4;
        case DType::uint8: return 1;
        case DType::real64: return 8;
    }
    return 0;
}

std::string_view to_string(DType dtype) {
    switch (dtype) {
        case DType::real32: return "real32";
        case DType::int32: return "int32";
        case DType::uint8: return "uint8";
        case DType::real64: return "real64";
    }
    return "unknown";
}

std::size_t TensorFile::element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    const U bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <typename T>
T get_le(const std::uint8_t* p) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
    return std::bit_cast<T>(bits);
}

double checked_integral(double v, double lo, double hi) {
    if (!(v == std::floor(v)) || v < lo || v > hi) {
        throw ArgumentError("value " + format_real(v) + " is not representable in the integer dtype");
    }
    return v;
}

}  // namespace

TensorFile make_tensor(DType dtype, std::vector<std::uint32_t> dims, std::span<const double> values) {
    TensorFile t;
    t.dtype = dtype;
    t.dims = std::move(dims);
    if (values.size() != t.element_count()) {
        throw ShapeError("tensor: " + std::to_string(values.size()) + " values for " +
                         std::to_string(t.element_count()) + " elements");
    }
    t.payload.reserve(values.size() * element_size(dtype));
    for (double v : values) {
        switch (dtype) {
            case DType::real32: put_le(t.payload, static_cast<float>(v)); break;
            case DType::real64: put_le(t.payload, v); break;
            case DType::int32:
                put_le(t.payload, static_cast<std::int32_t>(checked_integral(v, -2147483648.0, 2147483647.0)));
                break;
            case DType::uint8: t.payload.push_back(static_cast<std::uint8_t>(checked_integral(v, 0.0, 255.0))); break;
        }
    }
    return t;
}

std::vector<double> tensor_values(const TensorFile& t) {
    const std::size_t n = t.element_count();
    const std::size_t es = element_size(t.dtype);
    if (t.payload.size() != n * es) throw ShapeError("tensor payload size does not match its dims");
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* p = t.payload.data() + i * es;
        switch (t.dtype) {
            case DType::real32: out[i] = get_le<float>(p); break;
            case DType::real64: out[i] = get_le<double>(p); break;
            case DType::int32: out[i] = get_le<std::int32_t>(p); break;
            case DType::uint8: out[i] = p[0]; break;
        }
    }
    return out;
}

std::vector<std::uint8_t> serialize(const TensorFile& t) {
    if (t.payload.size() != t.element_count() * element_size(t.dtype)) {
        throw ShapeError("tensor payload size does not match its dims");
    }
    std::vector<std::uint8_t> out = {'P', 'Q', 'T', '1', kTensorVersion, static_cast<std::uint8_t>(t.dtype)};
    put_le(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) put_le(out, d);
    out.insert(out.end(), t.payload.begin(), t.payload.end());
    return out;
}

TensorFile deserialize(std::span<const std::uint8_t> bytes, const std::string& origin) {
    auto fail = [&](const std::string& what) -> TensorFile { throw ParseError(origin + ": " + what); };
    if (bytes.size() < 10) return fail("truncated tensor header");
    if (std::memcmp(bytes.data(), "PQT1", 4) != 0) return fail("bad magic (expected PQT1)");
    if (bytes[4] != kTensorVersion) return fail("unsupported tensor version " + std::to_string(bytes[4]));
    if (bytes[5] > 3) return fail("unknown dtype code " + std::to_string(bytes[5]));
    TensorFile t;
    t.dtype = static_cast<DType>(bytes[5]);
    const std::uint32_t rank = get_le<std::uint32_t>(bytes.data() + 6);
    std::size_t pos = 10;
    if (rank > (bytes.size() - pos) / 4) return fail("truncated dims");
    unsigned __int128 count = 1;
    for (std::uint32_t i = 0; i < rank; ++i, pos += 4) {
        t.dims.push_back(get_le<std::uint32_t>(bytes.data() + pos));
        count *= t.dims.back();
        if (count > bytes.size()) count = static_cast<unsigned __int128>(bytes.size()) + 1;
    }
    const unsigned __int128 need = count * element_size(t.dtype);
    if (need != bytes.size() - pos) {
        return fail("payload has " + std::to_string(bytes.size() - pos) + " bytes, dims require " +
                    std::to_string(static_cast<unsigned long long>(std::min<unsigned __int128>(need, ~0ULL))));
    }
    t.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
    return t;
}

void write_tensor(const std::filesystem::path& path, const TensorFile& t) {
    const auto bytes = serialize(t);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string() + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(path.string() + ": write failed");
}

TensorFile read_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string() + ": cannot open for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes, path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string() + ": cannot open for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string() + ": cannot open for writing");
    out << text;
    if (!out) throw IoError(path.string() + ": write failed");
}

std::string format_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) throw ParseError(where + ": unknown key '" + it.key() + "'");
    }
}

std::size_t get_count(const json& obj, const char* key, const std::string& where, std::optional<std::size_t> fallback) {
    if (!obj.contains(key)) {
        if (fallback) return *fallback;
        throw ParseError(where + ": missing '" + key + "'");
    }
    const auto& v = obj.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
        throw ParseError(where + ": '" + key + "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
}

std::string get_string(const json& obj, const char* key, const std::string& where, std::optional<std::string> fallback) {
    if (!obj.contains(key)) {
        if (fallback) return *fallback;
        throw ParseError(where + ": missing '" + key + "'");
    }
    if (!obj.at(key).is_string()) throw ParseError(where + ": '" + key + "' must be a string");
    return obj.at(key).get<std::string>();
}

bool get_bool(const json& obj, const char* key, const std::string& where, bool fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj.at(key).is_boolean()) throw ParseError(where + ": '" + key + "' must be true or false");
    return obj.at(key).get<bool>();
}

}  // namespace

Model parse_model_json(const std::string& text, const std::string& origin) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(origin + ": " + e.what());
    }
    if (!doc.is_object()) throw ParseError(origin + ": model document must be an object");
    reject_unknown(doc, {"name", "layers"}, origin);
    Model model;
    model.name = get_string(doc, "name", origin, std::string("model"));
    if (!doc.contains("layers") || !doc.at("layers").is_array()) throw ParseError(origin + ": 'layers' must be an array");
    std::size_t index = 0;
    for (const auto& item : doc.at("layers")) {
        const std::string where = origin + ": layer " + std::to_string(index++);
        if (!item.is_object()) throw ParseError(where + ": must be an object");
        reject_unknown(item,
                       {"name", "kind", "c_in", "c_out", "k_h", "k_w", "stride", "groups", "in_h", "in_w",
                        "pq_enabled", "bias", "activation", "pq"},
                       where);
        ModelLayer layer;
        auto& s = layer.spec;
        s.name = get_string(item, "name", where, std::nullopt);
        const std::string named = origin + ": layer '" + s.name + "'";
        s.kind = parse_layer_kind(get_string(item, "kind", named, std::nullopt));
        s.c_in = get_count(item, "c_in", named, std::nullopt);
        s.c_out = get_count(item, "c_out", named, std::nullopt);
        s.k_h = get_count(item, "k_h", named, 1);
        s.k_w = get_count(item, "k_w", named, 1);
        s.stride = get_count(item, "stride", named, 1);
        s.groups = get_count(item, "groups", named, 1);
        s.in_h = get_count(item, "in_h", named, 1);
        s.in_w = get_count(item, "in_w", named, 1);
        s.pq_enabled = get_bool(item, "pq_enabled", named, false);
        s.bias = get_bool(item, "bias", named, false);
        layer.activation = parse_activation(get_string(item, "activation", named, std::string("none")));
        if (item.contains("pq")) {
            const auto& pq = item.at("pq");
            if (!pq.is_object()) throw ParseError(named + ": 'pq' must be an object");
            reject_unknown(pq, {"l_s", "n_p", "metric", "tau"}, named + " pq");
            PQConfig cfg;
            cfg.l_s = get_count(pq, "l_s", named, std::nullopt);
            cfg.n_p = get_count(pq, "n_p", named, std::nullopt);
            cfg.metric = parse_metric(get_string(pq, "metric", named, std::string("l2_squared")));
            if (pq.contains("tau")) {
                if (!pq.at("tau").is_number()) throw ParseError(named + ": 'tau' must be a number");
                cfg.tau = pq.at("tau").get<double>();
            }
            try {
                validate(cfg);
            } catch (const ArgumentError& e) {
                throw ParseError(named + ": " + e.what());
            }
            layer.pq = cfg;
        }
        model.layers.push_back(std::move(layer));
    }
    validate(model);
    return model;
}

std::string model_to_json(const Model& model) {
    json doc;
    doc["name"] = model.name;
    doc["layers"] = json::array();
    for (const auto& layer : model.layers) {
        const auto& s = layer.spec;
        json item = json::object();
        item["name"] = s.name;
        item["kind"] = std::string(to_string(s.kind));
        item["c_in"] = s.c_in;
        item["c_out"] = s.c_out;
        item["k_h"] = s.k_h;
        item["k_w"] = s.k_w;
        item["stride"] = s.stride;
        item["groups"] = s.groups;
        item["in_h"] = s.in_h;
        item["in_w"] = s.in_w;
        item["pq_enabled"] = s.pq_enabled;
        item["bias"] = s.bias;
        item["activation"] = std::string(to_string(layer.activation));
        if (layer.pq) {
            item["pq"] = {{"l_s", layer.pq->l_s},
                          {"n_p", layer.pq->n_p},
                          {"metric", std::string(to_string(layer.pq->metric))},
                          {"tau", layer.pq->tau}};
        }
        doc["layers"].push_back(std::move(item));
    }
    return doc.dump(2) + "\n";
}

Model load_model(const std::filesystem::path& path) { return parse_model_json(read_text_file(path), path.string()); }

namespace {

struct ZooBuilder {
    Model model;
    std::size_t c = 0, h = 0, w = 0;

    void add(LayerSpec s, Activation act) {
        s.c_in = c;
        if (s.kind != LayerKind::linear) {
            s.in_h = h;
            s.in_w = w;
        }
        if (s.kind == LayerKind::depthwise) {
            s.c_out = c;
            s.groups = c;
        }
        c = s.c_out;
        h = s.kind == LayerKind::linear ? 1 : s.out_h();
        w = s.kind == LayerKind::linear ? 1 : s.out_w();
        model.layers.push_back({s, std::nullopt, act});
    }
    void conv(const std::string& name, std::size_t c_out, std::size_t kh, std::size_t kw, std::size_t stride,
              bool bias, bool pq) {
        LayerSpec s;
        s.name = name;
        s.kind = LayerKind::conv;
        s.c_out = c_out;
        s.k_h = kh;
        s.k_w = kw;
        s.stride = stride;
        s.bias = bias;
        s.pq_enabled = pq;
        add(s, Activation::relu);
    }
    void depthwise(const std::string& name, std::size_t stride) {
        LayerSpec s;
        s.name = name;
        s.kind = LayerKind::depthwise;
        s.k_h = 3;
        s.k_w = 3;
        s.stride = stride;
        add(s, Activation::relu);
    }
    void pointwise(const std::string& name, std::size_t c_out) {
        LayerSpec s;
        s.name = name;
        s.kind = LayerKind::pointwise;
        s.c_out = c_out;
        s.pq_enabled = true;
        add(s, Activation::relu);
    }
    void linear(std::size_t c_out) {
        LayerSpec s;
        s.name = "Linear";
        s.kind = LayerKind::linear;
        s.c_out = c_out;
        s.bias = true;
        add(s, Activation::none);
    }
};

Model build_dw_emnist() {
    ZooBuilder b{{"dw_emnist", {}}, 1, 28, 28};
    b.conv("Conv", 64, 3, 3, 1, true, false);
    const std::size_t widths[] = {96, 120, 150, 187, 234, 292, 366, 457, 572, 512};
    for (std::size_t i = 0; i < 10; ++i) {
        const std::size_t stride = (i == 0 || i == 3 || i == 6 || i == 9) ? 2 : 1;
        b.depthwise("DepthW-" + std::to_string(i + 1), stride);
        b.pointwise("PointW-" + std::to_string(i + 1), widths[i]);
    }
    b.linear(47);
    return b.model;
}

Model build_micronet_kws() {
    ZooBuilder b{{"micronet_kws", {}}, 1, 10, 49};
    b.conv("Conv", 84, 10, 4, 1, true, false);
    const std::size_t widths[] = {120, 84, 84, 84, 196};
    for (std::size_t i = 0; i < 5; ++i) {
        b.depthwise("DepthW-" + std::to_string(i + 1), i == 0 ? 2 : 1);
        b.pointwise("PointW-" + std::to_string(i + 1), widths[i]);
    }
    b.linear(12);
    return b.model;
}

Model build_resnet20() {
    ZooBuilder b{{"resnet20", {}}, 3, 32, 32};
    b.conv("Conv", 16, 3, 3, 1, false, false);
    const std::size_t widths[] = {16, 32, 64};
    for (std::size_t blk = 0; blk < 3; ++blk) {
        for (std::size_t i = 0; i < 6; ++i) {
            const std::size_t stride = (blk > 0 && i == 0) ? 2 : 1;
            b.conv("Block" + std::to_string(blk + 1) + "-Conv" + std::to_string(i + 1), widths[blk], 3, 3, stride,
                   false, true);
        }
    }
    b.linear(10);
    return b.model;
}

}  // namespace

std::vector<std::string> zoo_names() { return {"dw_emnist", "micronet_kws", "resnet20"}; }

Model zoo_model(const std::string& name) {
    Model m;
    if (name == "dw_emnist") {
        m = build_dw_emnist();
    } else if (name == "micronet_kws") {
        m = build_micronet_kws();
    } else if (name == "resnet20") {
        m = build_resnet20();
    } else {
        throw ArgumentError("unknown zoo model '" + name + "' (available: dw_emnist, micronet_kws, resnet20)");
    }
    validate(m);
    return m;
}

Model resolve_model(const std::string& name_or_path) {
    for (const auto& n : zoo_names()) {
        if (n == name_or_path) return zoo_model(n);
    }
    if (name_or_path == "micronet") return zoo_model("micronet_kws");
    if (name_or_path == "dw") return zoo_model("dw_emnist");
    return load_model(name_or_path);
}

}  // namespace pqa
