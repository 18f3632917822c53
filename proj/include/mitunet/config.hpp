#pragma once

#include <map>
#include <string>
#include <vector>

#include "mitunet/common.hpp"

namespace mitunet {

// Line-oriented "[section]" / "key = value" configuration text. Parsing is
// strict: unknown sections or keys are rejected with their file location by
// the typed accessors below.
class ConfigFile {
  public:
    static ConfigFile parse_file(const std::string& path);
    static ConfigFile parse_string(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& section, const std::string& key) const;
    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    long get_long(const std::string& section, const std::string& key, long fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

    // Call after reading every expected key; any key never consumed fails
    // with its location ("file:line").
    void reject_unconsumed() const;

    std::vector<std::string> sections() const;

  private:
    struct Entry {
        std::string value;
        long line = 0;
        mutable bool consumed = false;
    };
    std::string origin_;
    std::map<std::string, std::map<std::string, Entry>> data_;
    const Entry* find(const std::string& section, const std::string& key) const;
};

}  // namespace mitunet
