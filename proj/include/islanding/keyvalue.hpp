#pragma once

// Plain-text `key = value` documents used for scenario, estimator and
// waveform configuration.
//
//   # comment                 (also trailing, after whitespace)
//   key = value
//   include = other.scn       (path relative to the including file)
//
// Later assignments of a key override earlier ones; `get_all` returns every
// assignment in order for repeatable keys such as `event`.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace islanding {

struct KeyValueEntry {
    std::string key;
    std::string value;
    std::string source;
    int line = 0;
};

class KeyValueDoc {
public:
    static KeyValueDoc parse(std::istream& in, const std::string& source = "<input>",
                             const std::filesystem::path& base_dir = {});
    static KeyValueDoc parse_string(std::string_view text, const std::string& source = "<string>");
    static KeyValueDoc load(const std::filesystem::path& path);

    /// Appends an override; `spec` has the form `key=value`.
    void apply_override(std::string_view spec);
    void set(std::string key, std::string value, std::string source = "<override>");

    bool contains(std::string_view key) const;
    const KeyValueEntry* find(std::string_view key) const;
    std::vector<const KeyValueEntry*> get_all(std::string_view key) const;
    std::vector<std::string> keys_with_prefix(std::string_view prefix) const;

    std::string get_string(std::string_view key, std::string fallback) const;
    double get_double(std::string_view key, double fallback) const;
    long long get_int(std::string_view key, long long fallback) const;
    bool get_bool(std::string_view key, bool fallback) const;

    /// Throws ConfigError pointing at the entry when the key is missing.
    std::string require_string(std::string_view key) const;
    double require_double(std::string_view key) const;

    const std::vector<KeyValueEntry>& entries() const { return entries_; }

private:
    std::vector<KeyValueEntry> entries_;
};

/// Error helper tying a message to the location of an entry.
[[noreturn]] void throw_entry_error(const KeyValueEntry& entry, const std::string& message);

double parse_double(const KeyValueEntry& entry, std::string_view text);
double parse_double(std::string_view text);

std::string trim(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);

}  // namespace islanding
