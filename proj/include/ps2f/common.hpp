#pragma once
// Shared basics: error types, constants, small numeric helpers, parallel_for.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ps2f {

inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr const char* kVersion = "0.1.0";

using cd = std::complex<double>;

// Error taxonomy; the CLI maps these onto exit codes (2 config, 3 io, 4 numerical).
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed on-disk data; carries the byte offset where parsing stopped.
struct parse_error : io_error {
    std::size_t byte_offset;
    parse_error(const std::string& msg, std::size_t offset)
        : io_error(msg + " (at byte " + std::to_string(offset) + ")"), byte_offset(offset) {}
};

// Numerical failure (divergence, singular system); keeps whatever trace exists.
struct numerical_error : std::runtime_error {
    std::vector<double> loss_trace;
    explicit numerical_error(const std::string& msg, std::vector<double> trace = {})
        : std::runtime_error(msg), loss_trace(std::move(trace)) {}
};

inline double sq(double x) { return x * x; }

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

// Wrap an angle into [0, 2*pi). The half-open bound survives rounding: adding
// 2*pi to a tiny negative value can land exactly on 2*pi.
inline double wrap_2pi(double a) {
    a = std::fmod(a, 2.0 * kPi);
    if (a < 0) a += 2.0 * kPi;
    if (a >= 2.0 * kPi) a = 0.0;
    return a;
}

// Wrap an angle into [0, pi) (axis angles are modulo pi).
inline double wrap_pi(double a) {
    a = std::fmod(a, kPi);
    if (a < 0) a += kPi;
    if (a >= kPi) a = 0.0;
    return a;
}

// Signed difference between axis angles, folded into (-pi/2, pi/2].
inline double axis_diff(double a, double b) {
    double d = std::fmod(a - b, kPi);
    if (d > kPi / 2) d -= kPi;
    if (d <= -kPi / 2) d += kPi;
    return d;
}

// Block-parallel loop over [0, n). Falls back to serial for small n.
// Work must be independent per index; result layout must not depend on the
// thread count (each index writes its own slot only).
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                         std::size_t grain = 1) {
    if (n == 0) return;
    unsigned hw = std::thread::hardware_concurrency();
    std::size_t nthreads = std::max<std::size_t>(1, std::min<std::size_t>(hw ? hw : 1, n / std::max<std::size_t>(grain, 1)));
    if (nthreads <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    std::size_t chunk = (n + nthreads - 1) / nthreads;
    for (std::size_t t = 0; t < nthreads; ++t) {
        std::size_t b = t * chunk, e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&, b, e] {
            for (std::size_t i = b; i < e; ++i) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace ps2f
