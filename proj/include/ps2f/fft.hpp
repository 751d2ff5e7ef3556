#pragma once
// Thin FFT layer over FFTW3 (double precision).
//
// Plans are cached per (h, w, direction) and created with
// FFTW_ESTIMATE | FFTW_UNALIGNED so planning is deterministic and execution is
// valid on any caller buffer. Plan creation is serialized; execution is
// thread-safe on distinct arrays. Forward transform is unnormalized, inverse
// divides by h*w.

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>

#include "ps2f/common.hpp"

namespace ps2f {

namespace detail {

class FftPlans {
public:
    static FftPlans& instance() {
        static FftPlans p;
        return p;
    }

    fftw_plan get(int h, int w, int sign) {
        std::lock_guard<std::mutex> lock(mu_);
        auto key = std::make_tuple(h, w, sign);
        auto it = plans_.find(key);
        if (it != plans_.end()) return it->second;
        fftw_complex* buf = fftw_alloc_complex(static_cast<std::size_t>(h) * w);
        fftw_plan plan = fftw_plan_dft_2d(h, w, buf, buf, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
        fftw_free(buf);
        plans_.emplace(key, plan);
        return plan;
    }

private:
    FftPlans() = default;
    std::mutex mu_;
    std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

}  // namespace detail

// In-place 2D FFT of a row-major h x w complex buffer.
inline void fft2(std::vector<cd>& data, int h, int w, bool inverse = false) {
    if (data.size() != static_cast<std::size_t>(h) * w)
        throw config_error("fft2: buffer size does not match dimensions");
    fftw_plan plan = detail::FftPlans::instance().get(h, w, inverse ? FFTW_BACKWARD : FFTW_FORWARD);
    auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
    fftw_execute_dft(plan, ptr, ptr);
    if (inverse) {
        double s = 1.0 / (static_cast<double>(h) * w);
        for (cd& z : data) z *= s;
    }
}

// Circular roll by (dy, dx); used to implement fft shifts for any parity.
inline void roll2(std::vector<cd>& data, int h, int w, int dy, int dx) {
    dy = ((dy % h) + h) % h;
    dx = ((dx % w) + w) % w;
    if (dy == 0 && dx == 0) return;
    std::vector<cd> tmp(data.size());
    for (int y = 0; y < h; ++y) {
        int yy = (y + dy) % h;
        for (int x = 0; x < w; ++x) tmp[static_cast<std::size_t>(yy) * w + (x + dx) % w] = data[static_cast<std::size_t>(y) * w + x];
    }
    data.swap(tmp);
}

// Move the centered origin (h/2, w/2) to index (0, 0).
inline void ifftshift2(std::vector<cd>& data, int h, int w) { roll2(data, h, w, -(h / 2), -(w / 2)); }

// Move the origin from index (0, 0) back to the center (h/2, w/2).
inline void fftshift2(std::vector<cd>& data, int h, int w) { roll2(data, h, w, h / 2, w / 2); }

// Next power of two >= n (FFT sizes are kept power-of-two for speed).
inline int next_fft_size(int n) {
    int p = 1;
    while (p < n) p <<= 1;
    return p;
}

// acc += a .* b on complex buffers, written over raw doubles so the compiler
// vectorizes the hot multiply-accumulate loops of the imaging operator.
inline void cmul_acc(std::vector<cd>& acc, const std::vector<cd>& a, const std::vector<cd>& b) {
    double* __restrict__ ac = reinterpret_cast<double*>(acc.data());
    const double* __restrict__ aa = reinterpret_cast<const double*>(a.data());
    const double* __restrict__ bb = reinterpret_cast<const double*>(b.data());
    const std::size_t n = acc.size();
    for (std::size_t i = 0; i < n; ++i) {
        double ar = aa[2 * i], ai = aa[2 * i + 1];
        double br = bb[2 * i], bi = bb[2 * i + 1];
        ac[2 * i] += ar * br - ai * bi;
        ac[2 * i + 1] += ar * bi + ai * br;
    }
}

// acc += conj(a) .* b
inline void cmul_conj_acc(std::vector<cd>& acc, const std::vector<cd>& a, const std::vector<cd>& b) {
    double* __restrict__ ac = reinterpret_cast<double*>(acc.data());
    const double* __restrict__ aa = reinterpret_cast<const double*>(a.data());
    const double* __restrict__ bb = reinterpret_cast<const double*>(b.data());
    const std::size_t n = acc.size();
    for (std::size_t i = 0; i < n; ++i) {
        double ar = aa[2 * i], ai = aa[2 * i + 1];
        double br = bb[2 * i], bi = bb[2 * i + 1];
        ac[2 * i] += ar * br + ai * bi;
        ac[2 * i + 1] += ar * bi - ai * br;
    }
}

}  // namespace ps2f
