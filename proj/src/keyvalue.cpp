#include "islanding/keyvalue.hpp"

#include "islanding/errors.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace islanding {

std::string trim(std::string_view s) {
    auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_whitespace(std::string_view s) {
    std::vector<std::string> out;
    std::istringstream in{std::string(s)};
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

namespace {

std::string strip_comment(std::string_view line) {
    // `#` starts a comment at line start or after whitespace.
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '#' && (i == 0 || std::isspace(static_cast<unsigned char>(line[i - 1])))) {
            return std::string(line.substr(0, i));
        }
    }
    return std::string(line);
}

void parse_into(std::vector<KeyValueEntry>& entries, std::istream& in, const std::string& source,
                const std::filesystem::path& base_dir, int depth) {
    if (depth > 16) throw ConfigError(source, 0, "include nesting too deep");
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = trim(strip_comment(raw));
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(source, line_no, "expected `key = value`, got `" + line + "`");
        std::string key = trim(std::string_view(line).substr(0, eq));
        std::string value = trim(std::string_view(line).substr(eq + 1));
        if (key.empty()) throw ConfigError(source, line_no, "empty key");
        if (key == "include") {
            std::filesystem::path inc = base_dir / value;
            std::ifstream f(inc);
            if (!f) throw ConfigError(source, line_no, "cannot open included file `" + inc.string() + "`");
            parse_into(entries, f, inc.string(), inc.parent_path(), depth + 1);
            continue;
        }
        entries.push_back({std::move(key), std::move(value), source, line_no});
    }
}

}  // namespace

KeyValueDoc KeyValueDoc::parse(std::istream& in, const std::string& source, const std::filesystem::path& base_dir) {
    KeyValueDoc doc;
    parse_into(doc.entries_, in, source, base_dir, 0);
    return doc;
}

KeyValueDoc KeyValueDoc::parse_string(std::string_view text, const std::string& source) {
    std::istringstream in{std::string(text)};
    return parse(in, source, std::filesystem::current_path());
}

KeyValueDoc KeyValueDoc::load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError(path.string(), 0, "cannot open file");
    return parse(f, path.string(), path.parent_path());
}

void KeyValueDoc::apply_override(std::string_view spec) {
    auto eq = spec.find('=');
    if (eq == std::string_view::npos) throw ConfigError("<override>", 0, "expected key=value, got `" + std::string(spec) + "`");
    std::string key = trim(spec.substr(0, eq));
    if (key.empty()) throw ConfigError("<override>", 0, "empty key in `" + std::string(spec) + "`");
    set(std::move(key), trim(spec.substr(eq + 1)));
}

void KeyValueDoc::set(std::string key, std::string value, std::string source) {
    entries_.push_back({std::move(key), std::move(value), std::move(source), 0});
}

bool KeyValueDoc::contains(std::string_view key) const { return find(key) != nullptr; }

const KeyValueEntry* KeyValueDoc::find(std::string_view key) const {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (it->key == key) return &*it;
    }
    return nullptr;
}

std::vector<const KeyValueEntry*> KeyValueDoc::get_all(std::string_view key) const {
    std::vector<const KeyValueEntry*> out;
    for (const auto& e : entries_) {
        if (e.key == key) out.push_back(&e);
    }
    return out;
}

std::vector<std::string> KeyValueDoc::keys_with_prefix(std::string_view prefix) const {
    std::vector<std::string> out;
    for (const auto& e : entries_) {
        if (e.key.starts_with(prefix) && std::find(out.begin(), out.end(), e.key) == out.end()) out.push_back(e.key);
    }
    return out;
}

void throw_entry_error(const KeyValueEntry& entry, const std::string& message) {
    throw ConfigError(entry.source, entry.line, "`" + entry.key + "`: " + message);
}

double parse_double(std::string_view text) {
    std::string t = trim(text);
    if (t == "inf" || t == "+inf" || t == "infinity") return std::numeric_limits<double>::infinity();
    if (t == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) {
        throw InvalidArgument("not a number: `" + t + "`");
    }
    return v;
}

double parse_double(const KeyValueEntry& entry, std::string_view text) {
    try {
        return parse_double(text);
    } catch (const InvalidArgument& e) {
        throw_entry_error(entry, e.what());
    }
}

std::string KeyValueDoc::get_string(std::string_view key, std::string fallback) const {
    const auto* e = find(key);
    return e ? e->value : std::move(fallback);
}

double KeyValueDoc::get_double(std::string_view key, double fallback) const {
    const auto* e = find(key);
    return e ? parse_double(*e, e->value) : fallback;
}

long long KeyValueDoc::get_int(std::string_view key, long long fallback) const {
    const auto* e = find(key);
    if (!e) return fallback;
    long long v = 0;
    const auto& t = e->value;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || ptr != t.data() + t.size()) throw_entry_error(*e, "not an integer: `" + t + "`");
    return v;
}

bool KeyValueDoc::get_bool(std::string_view key, bool fallback) const {
    const auto* e = find(key);
    if (!e) return fallback;
    std::string v = e->value;
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
    if (v == "true" || v == "on" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "off" || v == "no" || v == "0") return false;
    throw_entry_error(*e, "not a boolean: `" + e->value + "`");
}

std::string KeyValueDoc::require_string(std::string_view key) const {
    const auto* e = find(key);
    if (!e) throw ConfigError("missing required key `" + std::string(key) + "`");
    return e->value;
}

double KeyValueDoc::require_double(std::string_view key) const {
    const auto* e = find(key);
    if (!e) throw ConfigError("missing required key `" + std::string(key) + "`");
    return parse_double(*e, e->value);
}

}  // namespace islanding
