#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace palmer {

// Flat key-value configuration. File format: one `key = value` per line,
// `#` starts a comment. Keys are dotted lowercase (env.kind, grid.width, ...).
class Config {
public:
    Config() = default;

    static Config from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("config: cannot open " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        return from_string(ss.str());
    }

    static Config from_string(const std::string& text) {
        Config cfg;
        std::istringstream in(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error("config: line " + std::to_string(lineno) + ": expected key = value");
            std::string key = trim(line.substr(0, eq));
            std::string val = trim(line.substr(eq + 1));
            if (key.empty()) throw std::runtime_error("config: line " + std::to_string(lineno) + ": empty key");
            cfg.values_[key] = val;
        }
        return cfg;
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    // accepts "key=value" override strings from the CLI
    void set_override(const std::string& kv) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::runtime_error("config override must be key=value: " + kv);
        set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string str(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    std::string require(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw std::runtime_error("config: missing required key " + key);
        return it->second;
    }

    long long integer(const std::string& key, long long fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        return parse_int(key, it->second);
    }

    double real(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        return parse_real(key, it->second);
    }

    bool flag(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        const std::string& v = it->second;
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        throw std::runtime_error("config: key " + key + " is not a boolean: " + v);
    }

    // comma-separated integers, e.g. eval.bands = 4,8,12
    std::vector<long long> int_list(const std::string& key, const std::vector<long long>& fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<long long> out;
        std::istringstream ss(it->second);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            tok = trim(tok);
            if (!tok.empty()) out.push_back(parse_int(key, tok));
        }
        return out;
    }

    // canonical text: sorted "key = value" lines; basis for the config hash
    std::string canonical() const {
        std::string out;
        for (const auto& [k, v] : values_) {
            out += k;
            out += " = ";
            out += v;
            out += '\n';
        }
        return out;
    }

    // FNV-1a 64-bit over the canonical text
    std::uint64_t hash() const { return fnv(canonical()); }

    // hash over the entries whose keys start with one of the prefixes;
    // used for artifact compatibility checks that must ignore query-time
    // parameters
    std::uint64_t subset_hash(const std::vector<std::string>& prefixes) const {
        std::string text;
        for (const auto& [k, v] : values_) {
            for (const auto& p : prefixes)
                if (k.rfind(p, 0) == 0) {
                    text += k;
                    text += " = ";
                    text += v;
                    text += '\n';
                    break;
                }
        }
        return fnv(text);
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    static std::uint64_t fnv(const std::string& text) {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (unsigned char c : text) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        return h;
    }

    static std::string trim(const std::string& s) {
        auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    static long long parse_int(const std::string& key, const std::string& v) {
        std::size_t pos = 0;
        long long x = 0;
        try {
            x = std::stoll(v, &pos);
        } catch (...) {
            throw std::runtime_error("config: key " + key + " is not an integer: " + v);
        }
        if (pos != v.size()) throw std::runtime_error("config: key " + key + " is not an integer: " + v);
        return x;
    }

    static double parse_real(const std::string& key, const std::string& v) {
        std::size_t pos = 0;
        double x = 0;
        try {
            x = std::stod(v, &pos);
        } catch (...) {
            throw std::runtime_error("config: key " + key + " is not a number: " + v);
        }
        if (pos != v.size()) throw std::runtime_error("config: key " + key + " is not a number: " + v);
        return x;
    }

    std::map<std::string, std::string> values_;
};

} // namespace palmer
