#pragma once

#include <fstream>
#include <json.hpp>

#include "imdnet/degrade.hpp"

namespace imdnet {
namespace degrade {

/// One dataset manifest line: where the clean image lives and the exact
/// degradation applied to it.
struct ManifestEntry {
    std::string clean_path;
    DegradationSpec spec;
    std::string combo;
};

/// Plain-text manifest, one JSON object per line.
inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream os(path);
    check(os.good(), "write_manifest: cannot open " + path);
    for (const auto& e : entries) {
        nlohmann::json j{{"clean_path", e.clean_path}, {"haze_level", e.spec.haze_level},
                         {"rain_level", e.spec.rain_level}, {"noise_level", e.spec.noise_level},
                         {"seed", e.spec.rng_seed},         {"combo", e.combo}};
        os << j.dump() << "\n";
    }
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream is(path);
    check(is.good(), "read_manifest: cannot open " + path);
    std::vector<ManifestEntry> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        ManifestEntry e;
        e.clean_path = j.at("clean_path").get<std::string>();
        e.spec.haze_level = j.at("haze_level").get<double>();
        e.spec.rain_level = j.at("rain_level").get<double>();
        e.spec.noise_level = j.at("noise_level").get<double>();
        e.spec.rng_seed = j.at("seed").get<uint64_t>();
        e.combo = j.at("combo").get<std::string>();
        e.spec.validate();
        out.push_back(e);
    }
    return out;
}

}  // namespace degrade
}  // namespace imdnet
