#pragma once
// Counter-based random streams: every (seed, stream, counter) triple hashes to
// an independent value, so parallel noise generation is reproducible no matter
// how work is scheduled.

#include <cstdint>

#include "ps2f/common.hpp"

namespace ps2f {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// One independent stream, e.g. one per pixel: key = h(seed, stream_id),
// successive draws advance an internal counter.
class RandomStream {
public:
    RandomStream(std::uint64_t seed, std::uint64_t stream_id)
        : key_(splitmix64(seed ^ splitmix64(stream_id ^ 0xa5a5a5a5deadbeefULL))) {}

    std::uint64_t next_u64() { return splitmix64(key_ ^ splitmix64(counter_++)); }

    // uniform in (0, 1)
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }

    // standard normal (Box-Muller)
    double gaussian() {
        double u1 = uniform(), u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    // Poisson draw: Knuth's product method for small means, Hormann's PTRS
    // transformed rejection for large ones.
    std::uint64_t poisson(double lambda) {
        if (lambda <= 0) return 0;
        if (lambda < 10.0) {
            double limit = std::exp(-lambda), prod = uniform();
            std::uint64_t k = 0;
            while (prod > limit) {
                ++k;
                prod *= uniform();
            }
            return k;
        }
        const double b = 0.931 + 2.53 * std::sqrt(lambda);
        const double a = -0.059 + 0.02483 * b;
        const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        const double v_r = 0.9277 - 3.6224 / (b - 2.0);
        const double log_lambda = std::log(lambda);
        for (;;) {
            double u = uniform() - 0.5;
            double v = uniform();
            double us = 0.5 - std::abs(u);
            double kf = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
            if (us >= 0.07 && v <= v_r) return static_cast<std::uint64_t>(kf);
            if (kf < 0 || (us < 0.013 && v > us)) continue;
            if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
                kf * log_lambda - lambda - std::lgamma(kf + 1.0))
                return static_cast<std::uint64_t>(kf);
        }
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace ps2f
