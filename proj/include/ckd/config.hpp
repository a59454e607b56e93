#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace ckd {

/// Flat "key = value" configuration with dotted sections ("train.lr = 0.001").
/// '#' starts a comment. Unknown keys are rejected against the project schema;
/// flag overrides replace file values.
class Config {
public:
    static Config parse_text(const std::string& text);
    static Config parse_file(const std::string& path);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& def) const;
    double get_double(const std::string& key, double def) const;
    int get_int(const std::string& key, int def) const;
    std::int64_t get_int64(const std::string& key, std::int64_t def) const;
    bool get_bool(const std::string& key, bool def) const;
    std::vector<int> get_int_list(const std::string& key, std::vector<int> def) const;

    /// Throws ConfigError naming the first key not present in the schema.
    void require_known_keys(const std::set<std::string>& schema) const;

    /// Canonical text form (sorted keys), echoed into run output directories.
    std::string render() const;

    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

/// Every key any command understands.
const std::set<std::string>& config_schema();

} // namespace ckd
