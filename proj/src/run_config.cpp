#include "atomflow/run_config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "atomflow/errors.hpp"

namespace atomflow {

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

[[noreturn]] void bad_value(std::string_view key, const std::string& value,
                            const char* want) {
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + value +
                      "' as " + want);
}

} // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
    const std::string k = trim(key);
    if (k.empty()) throw ConfigError("config keys must be non-empty");
    entries_[k] = trim(value);
}

void RunConfig::set_long(std::string_view key, long value) {
    set(key, std::to_string(value));
}

void RunConfig::set_double(std::string_view key, double value) {
    // shortest decimal text that parses back to the same double
    char buf[64];
    for (int precision = 15; precision <= 17; ++precision) {
        std::snprintf(buf, sizeof(buf), "%.*g", precision, value);
        if (std::stod(buf) == value) break;
    }
    set(key, buf);
}

void RunConfig::set_bool(std::string_view key, bool value) {
    set(key, value ? "true" : "false");
}

bool RunConfig::contains(std::string_view key) const {
    return entries_.count(std::string(key)) > 0;
}

std::string RunConfig::get(std::string_view key) const {
    const auto it = entries_.find(std::string(key));
    if (it == entries_.end())
        throw ConfigError("missing config key '" + std::string(key) + "'");
    return it->second;
}

std::string RunConfig::get(std::string_view key, std::string_view fallback) const {
    return contains(key) ? get(key) : std::string(fallback);
}

long RunConfig::get_long(std::string_view key) const {
    const std::string value = get(key);
    try {
        std::size_t used = 0;
        const long out = std::stol(value, &used);
        if (used != value.size()) bad_value(key, value, "an integer");
        return out;
    } catch (const std::logic_error&) {
        bad_value(key, value, "an integer");
    }
}

long RunConfig::get_long(std::string_view key, long fallback) const {
    return contains(key) ? get_long(key) : fallback;
}

double RunConfig::get_double(std::string_view key) const {
    const std::string value = get(key);
    try {
        std::size_t used = 0;
        const double out = std::stod(value, &used);
        if (used != value.size()) bad_value(key, value, "a number");
        return out;
    } catch (const std::logic_error&) {
        bad_value(key, value, "a number");
    }
}

double RunConfig::get_double(std::string_view key, double fallback) const {
    return contains(key) ? get_double(key) : fallback;
}

bool RunConfig::get_bool(std::string_view key) const {
    const std::string value = get(key);
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    bad_value(key, value, "a boolean (true/false/1/0)");
}

bool RunConfig::get_bool(std::string_view key, bool fallback) const {
    return contains(key) ? get_bool(key) : fallback;
}

void RunConfig::apply(const RunConfig& overrides) {
    for (const auto& [key, value] : overrides.entries_) entries_[key] = value;
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& [key, value] : entries_) {
        out += key;
        out += " = ";
        out += value;
        out += "\n";
    }
    return out;
}

std::ostream& operator<<(std::ostream& os, const RunConfig& config) {
    return os << config.to_text();
}

RunConfig parse_run_config(std::istream& is) {
    RunConfig config;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped.front() == '#') continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected 'key = value'");
        const std::string key = trim(stripped.substr(0, eq));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        config.set(key, stripped.substr(eq + 1));
    }
    return config;
}

RunConfig read_run_config_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open config file: " + path);
    return parse_run_config(is);
}

void init_run_dir(const std::string& dir, const RunConfig& resolved) {
    namespace fs = std::filesystem;
    std::error_code ec;
    for (const char* sub : {"checkpoints", "samples", "metrics", "logs"}) {
        fs::create_directories(fs::path(dir) / sub, ec);
        if (ec) throw DataError("cannot create run directory " + dir + ": " + ec.message());
    }
    std::ofstream os(fs::path(dir) / "config.txt", std::ios::binary);
    if (!os) throw DataError("cannot write resolved config under " + dir);
    os << resolved;
}

} // namespace atomflow
