#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace trusttune {

struct ArtifactRef {
    std::string path;      // relative to the manifest's directory
    std::string hash_hex;  // FNV-1a of the file bytes
};

// One manifest per (config, seed) run. Every emitted file is listed in
// exactly one manifest; validate() re-hashes each artifact on disk.
struct RunManifest {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<ArtifactRef> artifacts;
    std::uint64_t fp_total = 0;
    std::uint64_t bp_total = 0;
    std::uint64_t xfp_total = 0;
    double wall_seconds = 0.0;
    std::string status = "ok";  // ok | failed

    void add_artifact(const std::string& base_dir, const std::string& rel_path);
    void save(const std::string& path) const;
    static RunManifest load(const std::string& path);
    // Throws InvariantViolation when an artifact is missing or its hash drifted.
    void validate(const std::string& base_dir) const;
};

}  // namespace trusttune
