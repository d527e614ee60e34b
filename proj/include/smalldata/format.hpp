#pragma once

#include <charconv>
#include <cmath>
#include <string>
#include <system_error>

namespace smalldata {

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_double(double v) {
    if (std::isnan(v)) {
        return "nan";
    }
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& text) {
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
        return std::nan("");
    }
    return v;
}

} // namespace smalldata
