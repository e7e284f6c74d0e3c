#include "trusttune/manifest.hpp"

#include <fstream>

#include <json.hpp>

#include "trusttune/checkpoint.hpp"
#include "trusttune/errors.hpp"
#include "trusttune/hash.hpp"

namespace trusttune {

void RunManifest::add_artifact(const std::string& base_dir, const std::string& rel_path) {
    artifacts.push_back({rel_path, to_hex(file_content_hash(base_dir + "/" + rel_path))});
}

void RunManifest::save(const std::string& path) const {
    nlohmann::json doc;
    doc["config_hash"] = config_hash;
    doc["seed"] = seed;
    doc["fp_total"] = fp_total;
    doc["bp_total"] = bp_total;
    doc["xfp_total"] = xfp_total;
    doc["wall_seconds"] = wall_seconds;
    doc["status"] = status;
    nlohmann::json arts = nlohmann::json::array();
    for (const ArtifactRef& a : artifacts) arts.push_back({{"path", a.path}, {"hash", a.hash_hex}});
    doc["artifacts"] = arts;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open '" + path + "' for writing");
    out << doc.dump(2) << "\n";
}

RunManifest RunManifest::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path + "'");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": invalid manifest JSON: " + e.what());
    }
    RunManifest m;
    m.config_hash = doc.at("config_hash").get<std::string>();
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.fp_total = doc.at("fp_total").get<std::uint64_t>();
    m.bp_total = doc.at("bp_total").get<std::uint64_t>();
    m.xfp_total = doc.at("xfp_total").get<std::uint64_t>();
    m.wall_seconds = doc.at("wall_seconds").get<double>();
    m.status = doc.at("status").get<std::string>();
    for (const auto& a : doc.at("artifacts"))
        m.artifacts.push_back({a.at("path").get<std::string>(), a.at("hash").get<std::string>()});
    return m;
}

void RunManifest::validate(const std::string& base_dir) const {
    for (const ArtifactRef& a : artifacts) {
        const std::string full = base_dir + "/" + a.path;
        std::uint64_t h;
        try {
            h = file_content_hash(full);
        } catch (const ParseError&) {
            throw InvariantViolation("manifest artifact missing: " + full);
        }
        if (to_hex(h) != a.hash_hex)
            throw InvariantViolation("manifest artifact hash mismatch: " + full);
    }
}

}  // namespace trusttune
