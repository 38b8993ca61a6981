#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tesser/errors.hpp"

namespace tesser {

inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

// Flat key=value store with dotted namespaces ("modulation.lambda_attn=0.4").
// Lines are UTF-8; '#' starts a comment; blank lines are skipped. Typed
// accessors mark keys as consumed so callers can reject unknown keys.
class ConfigMap {
public:
    ConfigMap() = default;

    static ConfigMap parse_text(const std::string& text, const std::string& origin = "<string>") {
        ConfigMap cfg;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string s = strip(line);
            if (s.empty() || s[0] == '#') continue;
            auto eq = s.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + s + "'");
            std::string key = strip(s.substr(0, eq));
            std::string value = strip(s.substr(eq + 1));
            if (key.empty() || !valid_key(key))
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": invalid key '" + key + "'");
            if (cfg.values_.count(key))
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
            cfg.values_[key] = value;
        }
        return cfg;
    }

    static ConfigMap parse_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open config file '" + path + "'");
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse_text(buf.str(), path);
    }

    // Overrides (e.g. from --set) replace existing entries.
    void set(const std::string& key, const std::string& value) {
        if (key.empty() || !valid_key(key)) throw ConfigError("invalid key '" + key + "'");
        values_[key] = value;
    }

    // Accepts "key=value" as written on a command line.
    void set_pair(const std::string& pair) {
        auto eq = pair.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + pair + "'");
        set(strip(pair.substr(0, eq)), strip(pair.substr(eq + 1)));
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        consumed_.insert(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        consumed_.insert(key);
        if (it == values_.end()) return fallback;
        return parse_double(key, it->second);
    }

    std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
        auto it = values_.find(key);
        consumed_.insert(key);
        if (it == values_.end()) return fallback;
        return parse_int(key, it->second);
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        consumed_.insert(key);
        if (it == values_.end()) return fallback;
        const std::string& v = it->second;
        if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "off" || v == "no") return false;
        throw ConfigError("key '" + key + "': expected boolean, got '" + v + "'");
    }

    // Comma-separated list of doubles ("0,0.5,0.7,1.0").
    std::vector<double> get_double_list(const std::string& key, const std::vector<double>& fallback) const {
        auto it = values_.find(key);
        consumed_.insert(key);
        if (it == values_.end()) return fallback;
        std::vector<double> out;
        std::istringstream in(it->second);
        std::string tok;
        while (std::getline(in, tok, ',')) {
            tok = strip(tok);
            if (tok.empty()) throw ConfigError("key '" + key + "': empty list element");
            out.push_back(parse_double(key, tok));
        }
        if (out.empty()) throw ConfigError("key '" + key + "': empty list");
        return out;
    }

    std::vector<std::string> get_string_list(const std::string& key,
                                             const std::vector<std::string>& fallback) const {
        auto it = values_.find(key);
        consumed_.insert(key);
        if (it == values_.end()) return fallback;
        std::vector<std::string> out;
        std::istringstream in(it->second);
        std::string tok;
        while (std::getline(in, tok, ',')) {
            tok = strip(tok);
            if (tok.empty()) throw ConfigError("key '" + key + "': empty list element");
            out.push_back(tok);
        }
        if (out.empty()) throw ConfigError("key '" + key + "': empty list");
        return out;
    }

    // Keys present in the map that no accessor ever touched. A strict caller
    // reads its whole schema first, then rejects anything left over.
    std::vector<std::string> unconsumed() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : values_)
            if (!consumed_.count(k)) out.push_back(k);
        return out;
    }

    void reject_unconsumed() const {
        auto extra = unconsumed();
        if (extra.empty()) return;
        std::string msg = "unknown config key";
        if (extra.size() > 1) msg += "s";
        msg += ":";
        for (const auto& k : extra) msg += " '" + k + "'";
        throw ConfigError(msg);
    }

    // Sorted key=value dump; the canonical form behind the config hash.
    std::string canonical() const {
        std::string out;
        for (const auto& [k, v] : values_) {
            out += k;
            out += '=';
            out += v;
            out += '\n';
        }
        return out;
    }

    // FNV-1a 64-bit over the canonical serialization.
    std::uint64_t hash() const { return fnv1a64(canonical()); }

    std::string hash_hex() const { return hex64(hash()); }

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    static std::string strip(const std::string& s) {
        std::size_t a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return "";
        std::size_t b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    }

    static bool valid_key(const std::string& key) {
        for (char c : key) {
            bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                      c == '_' || c == '.' || c == '-';
            if (!ok) return false;
        }
        return true;
    }

    static double parse_double(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            double d = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': expected number, got '" + v + "'");
        }
    }

    static std::int64_t parse_int(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            long long i = std::stoll(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return static_cast<std::int64_t>(i);
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': expected integer, got '" + v + "'");
        }
    }

    std::map<std::string, std::string> values_;
    mutable std::set<std::string> consumed_;
};

}  // namespace tesser
