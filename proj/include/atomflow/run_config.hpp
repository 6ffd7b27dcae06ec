#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <string_view>

namespace atomflow {

// Flat key/value settings merged from a config file plus command-line
// overrides. Values are stored as text; typed getters parse on demand so a
// resolved config can always be echoed back byte-exactly.
class RunConfig {
public:
    void set(std::string_view key, std::string_view value);
    void set_long(std::string_view key, long value);
    void set_double(std::string_view key, double value);
    void set_bool(std::string_view key, bool value);

    bool contains(std::string_view key) const;
    // getters with a default throw ConfigError only when the stored text
    // fails to parse; the no-default forms throw when the key is missing
    std::string get(std::string_view key) const;
    std::string get(std::string_view key, std::string_view fallback) const;
    long get_long(std::string_view key) const;
    long get_long(std::string_view key, long fallback) const;
    double get_double(std::string_view key) const;
    double get_double(std::string_view key, double fallback) const;
    bool get_bool(std::string_view key) const;
    bool get_bool(std::string_view key, bool fallback) const;

    // merge: every entry of `overrides` replaces this config's entry
    void apply(const RunConfig& overrides);

    const std::map<std::string, std::string>& entries() const { return entries_; }
    std::string to_text() const; // sorted "key = value" lines

private:
    std::map<std::string, std::string> entries_;
};

std::ostream& operator<<(std::ostream& os, const RunConfig& config);

// Parses flat "key = value" text; blank lines and '#' comments are skipped.
RunConfig parse_run_config(std::istream& is);
RunConfig read_run_config_file(const std::string& path);

// Creates <dir> with the standard checkpoints/, samples/, metrics/ and logs/
// subdirectories and echoes the resolved config into <dir>/config.txt.
void init_run_dir(const std::string& dir, const RunConfig& resolved);

} // namespace atomflow
