#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace pollen {

// Declarative "[section] / key = value" config. CLI flags overlay file
// values; dump() emits the fully resolved set for reproducibility.
class ConfigMap {
  public:
    ConfigMap() = default;

    static ConfigMap from_file(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get_str(const std::string& key, const std::string& fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    uint64_t get_u64(const std::string& key, uint64_t fallback) const;

    std::string dump() const;

  private:
    std::map<std::string, std::string> values_;  // "section.key" -> value
};

}  // namespace pollen
