#include "trusttune/run_config.hpp"

#include <fstream>
#include <sstream>

#include "trusttune/errors.hpp"
#include "trusttune/hash.hpp"

namespace trusttune {

RunConfig RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str(), path);
}

RunConfig RunConfig::from_text(const std::string& text, const std::string& origin) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(origin + ": invalid JSON: " + e.what());
    }
    if (!doc.is_object()) throw ConfigError(origin + ": config must be a JSON object of dotted keys");
    RunConfig cfg;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (it.value().is_object() || it.value().is_array())
            throw ConfigError(origin + ": key '" + it.key() +
                              "' must be a flat scalar (use dotted keys, lists as comma strings)");
        cfg.kv_[it.key()] = it.value();
    }
    return cfg;
}

double RunConfig::get_double(const std::string& key, double fallback) const {
    consumed_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    if (!it->second.is_number()) throw ConfigError("config key '" + key + "' must be a number");
    return it->second.get<double>();
}

std::int64_t RunConfig::get_int(const std::string& key, std::int64_t fallback) const {
    consumed_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    if (!it->second.is_number_integer()) throw ConfigError("config key '" + key + "' must be an integer");
    return it->second.get<std::int64_t>();
}

std::uint64_t RunConfig::get_uint(const std::string& key, std::uint64_t fallback) const {
    const std::int64_t v = get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError("config key '" + key + "' must be nonnegative");
    return static_cast<std::uint64_t>(v);
}

bool RunConfig::get_bool(const std::string& key, bool fallback) const {
    consumed_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    if (!it->second.is_boolean()) throw ConfigError("config key '" + key + "' must be a boolean");
    return it->second.get<bool>();
}

std::string RunConfig::get_string(const std::string& key, const std::string& fallback) const {
    consumed_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    if (!it->second.is_string()) throw ConfigError("config key '" + key + "' must be a string");
    return it->second.get<std::string>();
}

std::vector<std::string> RunConfig::get_list(const std::string& key,
                                             const std::vector<std::string>& fallback) const {
    consumed_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    if (!it->second.is_string()) throw ConfigError("config key '" + key + "' must be a comma-separated string");
    std::vector<std::string> out;
    std::stringstream ss(it->second.get<std::string>());
    std::string item;
    while (std::getline(ss, item, ',')) {
        while (!item.empty() && item.front() == ' ') item.erase(item.begin());
        while (!item.empty() && item.back() == ' ') item.pop_back();
        if (!item.empty()) out.push_back(item);
    }
    if (out.empty()) throw ConfigError("config key '" + key + "' lists no values");
    return out;
}

void RunConfig::require_all_consumed() const {
    std::vector<std::string> unknown;
    for (const auto& [key, value] : kv_) {
        if (!consumed_.count(key)) unknown.push_back(key);
    }
    if (!unknown.empty()) {
        std::string msg = "unknown config keys:";
        for (const auto& k : unknown) msg += " '" + k + "'";
        throw ConfigError(msg);
    }
}

std::string RunConfig::canonical_text() const {
    nlohmann::json doc = nlohmann::json::object();
    for (const auto& [key, value] : kv_) doc[key] = value;
    return doc.dump();  // object keys are sorted; number formatting is canonical
}

std::string RunConfig::config_hash() const {
    return to_hex(fnv1a64(canonical_text()));
}

}  // namespace trusttune
