#pragma once
// Image-domain diagnostics for rendered PSFs: centroids, two-lobe clustering,
// lobe-axis angles, connected-intensity components, and rotation tracking
// across a defocus series.

#include <array>
#include <queue>

#include "ps2f/common.hpp"
#include "ps2f/field.hpp"

namespace ps2f {

// Intensity-weighted centroid in physical coordinates.
inline std::array<double, 2> weighted_centroid(const RealImage& img) {
    double sx = 0, sy = 0, s = 0;
    for (int iy = 0; iy < img.grid.height; ++iy)
        for (int ix = 0; ix < img.grid.width; ++ix) {
            double w = img.at(iy, ix);
            sx += w * img.grid.x(ix);
            sy += w * img.grid.y(iy);
            s += w;
        }
    if (s <= 0) return {0.0, 0.0};
    return {sx / s, sy / s};
}

// Total intensity within a disc around a physical position.
inline double disc_energy(const RealImage& img, double cx, double cy, double radius) {
    double acc = 0;
    for (int iy = 0; iy < img.grid.height; ++iy)
        for (int ix = 0; ix < img.grid.width; ++ix)
            if (sq(img.grid.x(ix) - cx) + sq(img.grid.y(iy) - cy) <= radius * radius)
                acc += img.at(iy, ix);
    return acc;
}

// Intensity-weighted 2-means split of the bright region. Seeds the two centers
// on opposite sides of the principal axis, so the result is deterministic.
// Returns the two cluster centroids (physical coordinates), heavier first.
// The floor keeps diffuse background from bias-dragging the lobe estimates.
inline std::array<std::array<double, 2>, 2> two_lobe_centroids(const RealImage& img,
                                                               double rel_floor = 0.25) {
    double floor = rel_floor * img.max();
    struct Px {
        double x, y, w;
    };
    std::vector<Px> pts;
    for (int iy = 0; iy < img.grid.height; ++iy)
        for (int ix = 0; ix < img.grid.width; ++ix) {
            double w = img.at(iy, ix);
            if (w > floor) pts.push_back({img.grid.x(ix), img.grid.y(iy), w});
        }
    if (pts.empty()) return {{{0, 0}, {0, 0}}};

    double mx = 0, my = 0, tw = 0;
    for (auto& p : pts) {
        mx += p.w * p.x;
        my += p.w * p.y;
        tw += p.w;
    }
    mx /= tw;
    my /= tw;
    double sxx = 0, sxy = 0, syy = 0;
    for (auto& p : pts) {
        sxx += p.w * (p.x - mx) * (p.x - mx);
        sxy += p.w * (p.x - mx) * (p.y - my);
        syy += p.w * (p.y - my) * (p.y - my);
    }
    // principal axis of the weighted covariance
    double ang = 0.5 * std::atan2(2 * sxy, sxx - syy);
    double ux = std::cos(ang), uy = std::sin(ang);
    double spread = std::sqrt(std::max(sxx, syy) / tw);
    std::array<double, 2> c0 = {mx + spread * ux, my + spread * uy};
    std::array<double, 2> c1 = {mx - spread * ux, my - spread * uy};

    double w0 = 0, w1 = 0;
    for (int it = 0; it < 100; ++it) {
        double nx0 = 0, ny0 = 0, nx1 = 0, ny1 = 0;
        w0 = w1 = 0;
        for (auto& p : pts) {
            double d0 = sq(p.x - c0[0]) + sq(p.y - c0[1]);
            double d1 = sq(p.x - c1[0]) + sq(p.y - c1[1]);
            if (d0 <= d1) {
                nx0 += p.w * p.x;
                ny0 += p.w * p.y;
                w0 += p.w;
            } else {
                nx1 += p.w * p.x;
                ny1 += p.w * p.y;
                w1 += p.w;
            }
        }
        if (w0 <= 0 || w1 <= 0) break;
        std::array<double, 2> n0 = {nx0 / w0, ny0 / w0}, n1 = {nx1 / w1, ny1 / w1};
        double moved = sq(n0[0] - c0[0]) + sq(n0[1] - c0[1]) + sq(n1[0] - c1[0]) + sq(n1[1] - c1[1]);
        c0 = n0;
        c1 = n1;
        if (moved < sq(1e-4 * img.grid.pitch)) break;
    }
    if (w1 > w0) std::swap(c0, c1);
    return {c0, c1};
}

// Axis angle of the two-lobe pattern, in [0, pi).
inline double lobe_axis_angle(const RealImage& img) {
    auto c = two_lobe_centroids(img);
    return wrap_pi(std::atan2(c[0][1] - c[1][1], c[0][0] - c[1][0]));
}

// Angle of the single dominant lobe about the image center, in [0, 2*pi).
inline double single_lobe_angle(const RealImage& img) {
    auto c = weighted_centroid(img);
    return wrap_2pi(std::atan2(c[1], c[0]));
}

// Total intensity of 8-connected components above rel_thresh * max,
// sorted descending.
inline std::vector<double> intensity_components(const RealImage& img, double rel_thresh = 0.1) {
    const int h = img.grid.height, w = img.grid.width;
    double thr = rel_thresh * img.max();
    std::vector<int> label(static_cast<std::size_t>(h) * w, -1);
    std::vector<double> sums;
    for (int sy = 0; sy < h; ++sy)
        for (int sx = 0; sx < w; ++sx) {
            std::size_t si = static_cast<std::size_t>(sy) * w + sx;
            if (img.v[si] <= thr || label[si] >= 0) continue;
            int id = static_cast<int>(sums.size());
            sums.push_back(0.0);
            std::queue<std::pair<int, int>> q;
            q.push({sy, sx});
            label[si] = id;
            while (!q.empty()) {
                auto [y, x] = q.front();
                q.pop();
                sums[id] += img.at(y, x);
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        int ny = y + dy, nx = x + dx;
                        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                        std::size_t ni = static_cast<std::size_t>(ny) * w + nx;
                        if (img.v[ni] > thr && label[ni] < 0) {
                            label[ni] = id;
                            q.push({ny, nx});
                        }
                    }
            }
        }
    std::sort(sums.begin(), sums.end(), std::greater<>());
    return sums;
}

// Largest-to-second-largest component intensity ratio (inf for one component).
inline double dominance_ratio(const RealImage& img, double rel_thresh = 0.1) {
    auto comps = intensity_components(img, rel_thresh);
    if (comps.empty()) return 0.0;
    if (comps.size() == 1) return std::numeric_limits<double>::infinity();
    return comps[0] / comps[1];
}

// Unwrap a series of axis angles (each modulo pi) by continuity and return the
// cumulative angles; planes must be closely spaced (step < pi/2).
inline std::vector<double> unwrap_axis_series(const std::vector<double>& axis_angles) {
    std::vector<double> out;
    out.reserve(axis_angles.size());
    double acc = 0;
    for (std::size_t i = 0; i < axis_angles.size(); ++i) {
        if (i == 0)
            acc = axis_angles[0];
        else
            acc += axis_diff(axis_angles[i], axis_angles[i - 1]);
        out.push_back(acc);
    }
    return out;
}

}  // namespace ps2f
