#pragma once

// Fixed 17-significant-digit text for reals, so files round-trip bit-exactly.

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "esom/errors.hpp"

namespace esom {

inline std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_real(const std::string& s) {
    if (s.empty()) throw IoError("expected a number, got an empty field");
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) throw IoError("malformed number '" + s + "'");
    if (errno == ERANGE && std::abs(v) > 1.0) throw IoError("number out of range '" + s + "'");
    return v;
}

inline long long parse_integer(const std::string& s) {
    if (s.empty()) throw IoError("expected an integer, got an empty field");
    errno = 0;
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size() || errno == ERANGE) throw IoError("malformed integer '" + s + "'");
    return v;
}

} // namespace esom
