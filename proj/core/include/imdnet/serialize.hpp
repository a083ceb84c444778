#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "imdnet/nn.hpp"

namespace imdnet {
namespace ser {

// Parameter container: "IMDP" magic, u32 version, u64 entry count, then per
// entry: u32 name length, name bytes, u8 dtype (0 = f32, 1 = f64), i32
// dims[4], raw little-endian payload. Entry order is the registration order,
// so rewriting a loaded file is byte-identical.
constexpr uint32_t kParamMagic = 0x504D4449;  // "IMDP"
constexpr uint32_t kVersion = 1;

template <typename T>
constexpr uint8_t dtype_tag() {
    return std::is_same_v<T, float> ? 0 : 1;
}

template <typename V>
void write_pod(std::ostream& os, const V& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& is) {
    V v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(V));
    check(is.good(), "serialize: truncated stream");
    return v;
}

template <typename T>
void write_param_map(std::ostream& os, const std::vector<std::pair<std::string, Tensor<T>>>& entries) {
    write_pod(os, kParamMagic);
    write_pod(os, kVersion);
    write_pod<uint64_t>(os, entries.size());
    for (const auto& [name, t] : entries) {
        write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), name.size());
        write_pod<uint8_t>(os, dtype_tag<T>());
        for (int d : t.shape) write_pod<int32_t>(os, d);
        os.write(reinterpret_cast<const char*>(t.data()), t.numel() * sizeof(T));
    }
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> read_param_map(std::istream& is) {
    check(read_pod<uint32_t>(is) == kParamMagic, "serialize: bad parameter-map magic");
    uint32_t ver = read_pod<uint32_t>(is);
    check(ver == kVersion, "serialize: unsupported version " + std::to_string(ver));
    uint64_t count = read_pod<uint64_t>(is);
    std::vector<std::pair<std::string, Tensor<T>>> out;
    out.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        uint32_t len = read_pod<uint32_t>(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        uint8_t tag = read_pod<uint8_t>(is);
        check(tag == dtype_tag<T>(), "serialize: dtype mismatch for " + name);
        std::array<int, 4> shape{};
        for (int d = 0; d < 4; ++d) shape[d] = read_pod<int32_t>(is);
        Tensor<T> t(shape);
        is.read(reinterpret_cast<char*>(t.data()), t.numel() * sizeof(T));
        check(is.good(), "serialize: truncated payload for " + name);
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

/// Load values into a parameter store by name. With allow_partial, unmatched
/// names on either side are skipped (ablation variants share sub-trees).
template <typename T>
int apply_params(ParamStore<T>& store, const std::vector<std::pair<std::string, Tensor<T>>>& entries,
                 bool allow_partial = false) {
    int applied = 0;
    for (const auto& [name, t] : entries) {
        Var<T> v = store.find(name);
        if (!v) {
            check(allow_partial, "apply_params: parameter " + name + " not present in this model");
            continue;
        }
        check(v->val.shape == t.shape, "apply_params: shape mismatch for " + name);
        v->val = t;
        ++applied;
    }
    return applied;
}

inline void write_kv_block(std::ostream& os, const std::map<std::string, std::string>& kv) {
    std::ostringstream text;
    for (const auto& [k, v] : kv) text << k << " = " << v << "\n";
    std::string s = text.str();
    write_pod<uint32_t>(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), s.size());
}

inline std::map<std::string, std::string> read_kv_block(std::istream& is) {
    uint32_t len = read_pod<uint32_t>(is);
    std::string s(len, '\0');
    is.read(s.data(), len);
    check(is.good(), "serialize: truncated config block");
    std::map<std::string, std::string> kv;
    std::istringstream text(s);
    std::string line;
    while (std::getline(text, line)) {
        auto eq = line.find(" = ");
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return kv;
}

}  // namespace ser
}  // namespace imdnet
