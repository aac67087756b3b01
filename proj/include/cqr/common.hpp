#pragma once

#include <cstdint>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cqr {

/// Bad inputs: malformed files, violated invariants, unusable configs.
/// The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A remote service (generation or embedding endpoint) failed after
/// retries were exhausted. The CLI maps this to exit code 2.
class BackendError : public std::runtime_error {
public:
    explicit BackendError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace log {

using Sink = std::function<void(std::string_view)>;

inline Sink& sink() {
    static Sink s = [](std::string_view msg) { std::cerr << msg << "\n"; };
    return s;
}

inline void set_sink(Sink s) { sink() = std::move(s); }

inline void warn(std::string_view msg) { sink()(std::string("warning: ") + std::string(msg)); }
inline void info(std::string_view msg) { sink()(std::string(msg)); }

}  // namespace log

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 14695981039346656037ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 14695981039346656037ull) {
    return fnv1a(s.data(), s.size(), h);
}

/// Stable seed derivation for per-turn / per-request randomness. Folding the
/// components through FNV keeps runs reproducible independent of worker count
/// or platform.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view conv_id, int turn_id,
                                 std::string_view purpose, std::uint64_t index = 0) {
    std::uint64_t h = fnv1a(&base, sizeof(base));
    h = fnv1a(conv_id, h);
    h = fnv1a(&turn_id, sizeof(turn_id), h);
    h = fnv1a(purpose, h);
    h = fnv1a(&index, sizeof(index), h);
    return h;
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

}  // namespace cqr
