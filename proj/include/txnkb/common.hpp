#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace txnkb {

// Error taxonomy. Every throwing path in the library uses one of these so the
// CLI can map failures to distinct exit codes.
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct VersionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Grade { Weak = 0, Moderate = 1, Strong = 2 };

inline const char* to_string(Grade g) {
    switch (g) {
        case Grade::Strong: return "strong";
        case Grade::Moderate: return "moderate";
        default: return "weak";
    }
}

inline Grade grade_from_string(std::string_view s) {
    if (s == "strong") return Grade::Strong;
    if (s == "moderate") return Grade::Moderate;
    if (s == "weak") return Grade::Weak;
    throw ConfigError("unknown grade: " + std::string(s));
}

/// Strength grade of a signed evidence contribution. |woe| >= 0.5 is strong,
/// >= 0.2 moderate, anything else weak.
inline Grade grade_of(double woe, double strong_threshold = 0.5, double moderate_threshold = 0.2) {
    const double a = std::fabs(woe);
    if (a >= strong_threshold) return Grade::Strong;
    if (a >= moderate_threshold) return Grade::Moderate;
    return Grade::Weak;
}

/// Shortest decimal representation that round-trips through double.
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    if (res.ec != std::errc()) throw DataError("format_double failed");
    return std::string(buf, res.ptr);
}

inline std::uint64_t fnv1a(std::string_view data, std::uint64_t seed = 14695981039346656037ull) {
    std::uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string fnv1a_hex(std::string_view data) {
    static const char* digits = "0123456789abcdef";
    std::uint64_t h = fnv1a(data);
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

/// Lower quantile of an ascending-sorted sample: element at floor(q * (n - 1)).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw DataError("quantile of empty sample");
    if (q <= 0.0) return sorted.front();
    if (q >= 1.0) return sorted.back();
    const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(sorted.size() - 1)));
    return sorted[idx];
}

inline double sample_mean(const std::vector<double>& xs) {
    if (xs.empty()) throw DataError("mean of empty sample");
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

/// Sample standard deviation (n - 1 denominator); requires at least 2 points.
inline std::optional<double> sample_std(const std::vector<double>& xs) {
    if (xs.size() < 2) return std::nullopt;
    const double m = sample_mean(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

/// Lowercased [a-z0-9_]+ word tokens; everything else is a separator.
inline std::vector<std::string> tokenize_words(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || c == '_') {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

inline std::string truncate_utf8(std::string_view s, std::size_t max_bytes) {
    if (s.size() <= max_bytes) return std::string(s);
    std::size_t end = max_bytes;
    while (end > 0 && (static_cast<unsigned char>(s[end]) & 0xC0) == 0x80) --end;
    return std::string(s.substr(0, end));
}

}  // namespace txnkb
