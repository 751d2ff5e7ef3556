#pragma once
// Sampled 2D fields on physical grids: Grid2D, RealImage, ComplexField.
//
// Grids are square-pixel, centered on the optical axis: sample (ix, iy) sits at
// physical ((ix - width/2) * pitch, (iy - height/2) * pitch), so the axis lands
// exactly on sample (width/2, height/2).

#include <cstddef>
#include <numeric>

#include "ps2f/common.hpp"

namespace ps2f {

struct Grid2D {
    int width = 0;       // samples along x
    int height = 0;      // samples along y
    double pitch = 0.0;  // meters per sample

    Grid2D() = default;
    Grid2D(int w, int h, double p) : width(w), height(h), pitch(p) { validate(); }

    void validate() const {
        if (width < 2 || height < 2) throw config_error("Grid2D: width/height must be >= 2");
        if (!(pitch > 0.0)) throw config_error("Grid2D: pitch must be > 0");
    }

    std::size_t size() const { return static_cast<std::size_t>(width) * height; }
    double x(int ix) const { return (ix - width / 2) * pitch; }
    double y(int iy) const { return (iy - height / 2) * pitch; }
    double extent_x() const { return width * pitch; }
    double extent_y() const { return height * pitch; }
    int cx() const { return width / 2; }
    int cy() const { return height / 2; }

    bool operator==(const Grid2D& o) const {
        return width == o.width && height == o.height && pitch == o.pitch;
    }
};

struct RealImage {
    Grid2D grid;
    std::vector<double> v;

    RealImage() = default;
    explicit RealImage(const Grid2D& g, double fill = 0.0) : grid(g), v(g.size(), fill) {}

    double& at(int iy, int ix) { return v[static_cast<std::size_t>(iy) * grid.width + ix]; }
    double at(int iy, int ix) const { return v[static_cast<std::size_t>(iy) * grid.width + ix]; }

    double sum() const { return std::accumulate(v.begin(), v.end(), 0.0); }
    double max() const { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }
    double min() const { return v.empty() ? 0.0 : *std::min_element(v.begin(), v.end()); }

    void scale(double s) {
        for (double& x : v) x *= s;
    }
    // Normalize to unit sum; no-op on an all-zero image.
    void normalize_sum() {
        double s = sum();
        if (s > 0) scale(1.0 / s);
    }
};

struct ComplexField {
    Grid2D grid;
    std::vector<cd> v;

    ComplexField() = default;
    explicit ComplexField(const Grid2D& g, cd fill = cd(0, 0)) : grid(g), v(g.size(), fill) {}

    cd& at(int iy, int ix) { return v[static_cast<std::size_t>(iy) * grid.width + ix]; }
    cd at(int iy, int ix) const { return v[static_cast<std::size_t>(iy) * grid.width + ix]; }

    // Plain discrete L2 norm over the grid (no pitch weighting).
    double l2_norm() const {
        double s = 0;
        for (const cd& z : v) s += std::norm(z);
        return std::sqrt(s);
    }

    void normalize_l2() {
        double n = l2_norm();
        if (n > 0)
            for (cd& z : v) z /= n;
    }

    bool all_finite() const {
        for (const cd& z : v)
            if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
        return true;
    }

    RealImage intensity() const {
        RealImage out(grid);
        for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = std::norm(v[i]);
        return out;
    }
};

// <a, b> = sum conj(a_i) * b_i
inline cd inner(const ComplexField& a, const ComplexField& b) {
    cd s(0, 0);
    for (std::size_t i = 0; i < a.v.size(); ++i) s += std::conj(a.v[i]) * b.v[i];
    return s;
}

// Bilinear resample onto a target grid; both grids share the centered origin.
// Target samples outside the source extent read as zero. Rejects targets whose
// extent or pitch makes the resample meaningless.
inline RealImage resample_bilinear(const RealImage& src, const Grid2D& target) {
    target.validate();
    double ratio = target.pitch / src.grid.pitch;
    if (ratio < 1.0 / 16.0 || ratio > 16.0)
        throw config_error("resample_bilinear: target pitch incompatible with source sampling");
    if (target.extent_x() > src.grid.extent_x() + src.grid.pitch ||
        target.extent_y() > src.grid.extent_y() + src.grid.pitch)
        throw config_error("resample_bilinear: target extent exceeds rendered field");
    RealImage out(target);
    for (int iy = 0; iy < target.height; ++iy) {
        double ys = target.y(iy) / src.grid.pitch + src.grid.cy();
        int y0 = static_cast<int>(std::floor(ys));
        double fy = ys - y0;
        for (int ix = 0; ix < target.width; ++ix) {
            double xs = target.x(ix) / src.grid.pitch + src.grid.cx();
            int x0 = static_cast<int>(std::floor(xs));
            double fx = xs - x0;
            auto sample = [&](int yy, int xx) -> double {
                if (yy < 0 || yy >= src.grid.height || xx < 0 || xx >= src.grid.width) return 0.0;
                return src.at(yy, xx);
            };
            out.at(iy, ix) = (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                             fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
        }
    }
    return out;
}

}  // namespace ps2f
