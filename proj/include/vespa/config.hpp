#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace vespa {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ConfigKey {
    std::string name;
    std::string default_value;
    std::string doc;
};

/// Flat key=value configuration. Every key has a default; unknown keys are
/// rejected. Files may pull in others with `include = path` (resolved
/// relative to the including file).
class Config {
public:
    Config();

    static const std::vector<ConfigKey>& keys();

    void set(const std::string& key, const std::string& value);
    void load_file(const std::string& path);
    /// Accepts "--key=value" or "key=value" items.
    void apply_overrides(const std::vector<std::string>& items);

    [[nodiscard]] const std::string& get(const std::string& key) const;
    [[nodiscard]] std::uint64_t get_uint(const std::string& key) const;
    [[nodiscard]] double get_double(const std::string& key) const;
    [[nodiscard]] bool get_bool(const std::string& key) const;
    [[nodiscard]] bool is_auto(const std::string& key) const { return get(key) == "auto"; }

    /// All keys with current values and their documentation, one per line.
    [[nodiscard]] std::string render() const;

private:
    void load_file(const std::string& path, int depth);

    std::map<std::string, std::string> values_;
};

}  // namespace vespa
