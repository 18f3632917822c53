#include "mitunet/config.hpp"

#include <fstream>
#include <sstream>

namespace mitunet {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

ConfigFile ConfigFile::parse_file(const std::string& path) {
    std::ifstream is(path);
    check(bool(is), "config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_string(ss.str(), path);
}

ConfigFile ConfigFile::parse_string(const std::string& text, const std::string& origin) {
    ConfigFile cfg;
    cfg.origin_ = origin;
    std::istringstream is(text);
    std::string line, section;
    long lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            check(t.back() == ']' && t.size() > 2,
                  "config: malformed section header at " + origin + ":" +
                      std::to_string(lineno));
            section = trim(t.substr(1, t.size() - 2));
            cfg.data_[section];  // empty sections are fine
            continue;
        }
        size_t eq = t.find('=');
        check(eq != std::string::npos, "config: expected 'key = value' at " + origin + ":" +
                                           std::to_string(lineno));
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        check(!key.empty(), "config: empty key at " + origin + ":" + std::to_string(lineno));
        check(!section.empty(),
              "config: key '" + key + "' outside any [section] at " + origin + ":" +
                  std::to_string(lineno));
        auto [it, inserted] = cfg.data_[section].emplace(key, Entry{value, lineno, false});
        check(inserted, "config: duplicate key '" + section + "." + key + "' at " + origin +
                            ":" + std::to_string(lineno));
    }
    return cfg;
}

const ConfigFile::Entry* ConfigFile::find(const std::string& section,
                                          const std::string& key) const {
    auto s = data_.find(section);
    if (s == data_.end()) return nullptr;
    auto k = s->second.find(key);
    if (k == s->second.end()) return nullptr;
    k->second.consumed = true;
    return &k->second;
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
}

std::string ConfigFile::get_string(const std::string& section, const std::string& key,
                                   const std::string& fallback) const {
    const Entry* e = find(section, key);
    return e ? e->value : fallback;
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double fallback) const {
    const Entry* e = find(section, key);
    if (!e) return fallback;
    size_t pos = 0;
    double v = 0;
    try {
        v = std::stod(e->value, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    check(pos == e->value.size() && !e->value.empty(),
          "config: '" + section + "." + key + "' is not a number at " + origin_ + ":" +
              std::to_string(e->line));
    return v;
}

long ConfigFile::get_long(const std::string& section, const std::string& key,
                          long fallback) const {
    const Entry* e = find(section, key);
    if (!e) return fallback;
    size_t pos = 0;
    long v = 0;
    try {
        v = std::stol(e->value, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    check(pos == e->value.size() && !e->value.empty(),
          "config: '" + section + "." + key + "' is not an integer at " + origin_ + ":" +
              std::to_string(e->line));
    return v;
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key,
                          bool fallback) const {
    const Entry* e = find(section, key);
    if (!e) return fallback;
    if (e->value == "true" || e->value == "1") return true;
    if (e->value == "false" || e->value == "0") return false;
    fail("config: '" + section + "." + key + "' must be true/false at " + origin_ + ":" +
         std::to_string(e->line));
}

void ConfigFile::reject_unconsumed() const {
    for (const auto& [section, keys] : data_)
        for (const auto& [key, entry] : keys)
            check(entry.consumed, "config: unknown key '" + section + "." + key + "' at " +
                                      origin_ + ":" + std::to_string(entry.line));
}

std::vector<std::string> ConfigFile::sections() const {
    std::vector<std::string> out;
    for (const auto& [s, _] : data_) out.push_back(s);
    return out;
}

}  // namespace mitunet
