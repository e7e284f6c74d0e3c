#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace trusttune {

// Flat, typed key-value run configuration with dotted sections
// (model.*, task.*, method.*, optim.*, ...). Keys that no command reads are
// hard errors, so hyperparameter typos cannot pass silently.
class RunConfig {
public:
    RunConfig() = default;

    static RunConfig load_file(const std::string& path);
    static RunConfig from_text(const std::string& text, const std::string& origin = "<inline>");

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    // Comma-separated list value, e.g. "standard,r3f".
    std::vector<std::string> get_list(const std::string& key,
                                      const std::vector<std::string>& fallback) const;

    void set(const std::string& key, const nlohmann::json& value) { kv_[key] = value; }
    void erase(const std::string& key) { kv_.erase(key); }

    // Throws ConfigError naming every key no getter ever consumed.
    void require_all_consumed() const;

    // Hash of the canonicalized document (sorted keys, canonical number
    // formatting); equal configs hash equal regardless of key order.
    std::string config_hash() const;

    std::string canonical_text() const;

private:
    std::map<std::string, nlohmann::json> kv_;
    mutable std::set<std::string> consumed_;
};

}  // namespace trusttune
