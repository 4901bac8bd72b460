#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace polyaudit {

inline constexpr const char* kToolVersion = "0.1.0";

// Bad or inconsistent configuration values.  CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed, missing or self-inconsistent data (files, datasets, inputs).
// CLI maps this to exit code 3.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure at runtime (non-finite loss, degenerate statistics).
// CLI maps this to exit code 4.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require_config(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

inline void require_data(bool ok, const std::string& msg) {
    if (!ok) throw DataError(msg);
}

inline void require_finite(double v, const std::string& what) {
    if (!std::isfinite(v)) throw NumericError(what + " is not finite");
}

// Lower median: for even counts returns the smaller of the two middle
// elements.  Every median in this project uses this convention so that
// anchor statistics, calibration factors and partition thresholds agree.
template <typename T>
T lower_median(std::vector<T> values) {
    if (values.empty()) throw DataError("median of empty set");
    const size_t mid = (values.size() - 1) / 2;
    std::nth_element(values.begin(), values.begin() + mid, values.end());
    return values[mid];
}

// FNV-1a, used to fingerprint canonical config dumps in reports.
inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Shortest decimal text that round-trips the exact double; locale-free, so
// emitted artifacts are byte-stable across machines.
inline std::string format_double(double v) {
    require_finite(v, "formatted value");
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

}  // namespace polyaudit
