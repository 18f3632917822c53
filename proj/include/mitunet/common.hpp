#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mitunet {

using Shape = std::vector<long>;

[[noreturn]] inline void fail(const std::string& msg) {
    throw std::invalid_argument(msg);
}

inline void check(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

inline long numel(const Shape& s) {
    long n = 1;
    for (long d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

inline void check_shape_match(const Shape& a, const Shape& b, const std::string& who) {
    if (a != b) fail(who + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace mitunet
