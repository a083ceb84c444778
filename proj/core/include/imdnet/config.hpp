#pragma once

#include <fstream>
#include <map>
#include <string>

#include "imdnet/tensor.hpp"

namespace imdnet {
namespace cfgfile {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

/// key = value lines; '#' starts a comment. Keys are namespaced as
/// model.* / train.*.
inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream is(path);
    check(is.good(), "parse_config_file: cannot open " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(is, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string k = trim(line.substr(0, eq));
        std::string v = trim(line.substr(eq + 1));
        if (!k.empty()) kv[k] = v;
    }
    return kv;
}

inline void write_config_file(const std::string& path, const std::map<std::string, std::string>& kv) {
    std::ofstream os(path);
    check(os.good(), "write_config_file: cannot open " + path);
    for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
}

/// Split a combined map into the model.* and train.* sub-maps.
inline void split_namespaced(const std::map<std::string, std::string>& kv,
                             std::map<std::string, std::string>& model_kv,
                             std::map<std::string, std::string>& train_kv) {
    for (const auto& [k, v] : kv) {
        if (k.rfind("model.", 0) == 0) model_kv[k.substr(6)] = v;
        if (k.rfind("train.", 0) == 0) train_kv[k.substr(6)] = v;
    }
}

}  // namespace cfgfile
}  // namespace imdnet
