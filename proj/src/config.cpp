#include "pollen/config.hpp"

#include <cstdlib>
#include <fstream>

#include "pollen/errors.hpp"

namespace pollen {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

ConfigMap ConfigMap::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    ConfigMap cfg;
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto comment = line.find_first_of("#;");
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw IoError("config '" + path + "' line " + std::to_string(line_no) +
                              ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw IoError("config '" + path + "' line " + std::to_string(line_no) +
                          ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw IoError("config '" + path + "' line " + std::to_string(line_no) + ": empty key");
        cfg.values_[section.empty() ? key : section + "." + key] = value;
    }
    return cfg;
}

std::string ConfigMap::get_str(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

int64_t ConfigMap::get_int(const std::string& key, int64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stoll(it->second);
    } catch (...) {
        throw ValueError("config key '" + key + "': '" + it->second + "' is not an integer");
    }
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stod(it->second);
    } catch (...) {
        throw ValueError("config key '" + key + "': '" + it->second + "' is not a number");
    }
}

bool ConfigMap::get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ValueError("config key '" + key + "': '" + v + "' is not a boolean");
}

uint64_t ConfigMap::get_u64(const std::string& key, uint64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stoull(it->second);
    } catch (...) {
        throw ValueError("config key '" + key + "': '" + it->second + "' is not an integer");
    }
}

std::string ConfigMap::dump() const {
    std::string out;
    std::string section;
    for (const auto& [key, value] : values_) {
        const auto dot = key.find('.');
        const std::string sec = dot == std::string::npos ? "" : key.substr(0, dot);
        const std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
        if (sec != section) {
            if (!out.empty()) out += '\n';
            out += "[" + sec + "]\n";
            section = sec;
        }
        out += name + " = " + value + "\n";
    }
    return out;
}

}  // namespace pollen
