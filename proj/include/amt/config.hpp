#pragma once

// Plain-text key=value configuration files. Lines are "key = value"; '#'
// starts a comment. Unknown keys are rejected by the consumers, each of
// which declares its accepted key set.

#include "amt/common.hpp"

#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace amt {

class KeyValueConfig {
public:
    static KeyValueConfig parse_string(const std::string& text) {
        KeyValueConfig cfg;
        std::istringstream is(text);
        std::string line;
        int line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            const size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            const size_t eq = trimmed.find('=');
            require(eq != std::string::npos, "config.bad_line",
                    "line " + std::to_string(line_no) + " is not key = value");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string val = trim(trimmed.substr(eq + 1));
            require(!key.empty(), "config.bad_line",
                    "empty key on line " + std::to_string(line_no));
            cfg.kv_[key] = val;
        }
        return cfg;
    }

    static KeyValueConfig parse_file(const std::string& path) {
        const std::vector<uint8_t> bytes = io::read_file(path);
        return parse_string(std::string(bytes.begin(), bytes.end()));
    }

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? fallback : it->second;
    }

    long get_int(const std::string& key, long fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        try {
            size_t used = 0;
            const long v = std::stol(it->second, &used);
            require(used == it->second.size(), "config.bad_value", key);
            return v;
        } catch (const std::exception&) {
            throw DataError("config.bad_value", "key " + key + " is not an integer");
        }
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        try {
            size_t used = 0;
            const double v = std::stod(it->second, &used);
            require(used == it->second.size(), "config.bad_value", key);
            return v;
        } catch (const std::exception&) {
            throw DataError("config.bad_value", "key " + key + " is not a number");
        }
    }

    std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        std::vector<int> out;
        std::istringstream is(it->second);
        std::string tok;
        while (std::getline(is, tok, ',')) {
            tok = trim(tok);
            require(!tok.empty(), "config.bad_value", "empty element in list " + key);
            out.push_back(static_cast<int>(std::stol(tok)));
        }
        require(!out.empty(), "config.bad_value", "empty list for key " + key);
        return out;
    }

    void reject_unknown_keys(const std::vector<std::string>& allowed) const {
        for (const auto& [key, _] : kv_) {
            bool ok = false;
            for (const std::string& a : allowed) ok = ok || a == key;
            require(ok, "config.unknown_key", "unknown configuration key: " + key);
        }
    }

private:
    static std::string trim(const std::string& s) {
        size_t b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        size_t e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> kv_;
};

} // namespace amt
