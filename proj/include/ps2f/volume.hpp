#pragma once
// Voxelized 3D scene intensity with physical pitch. Plane k sits at defocus
// z_origin + k * pitch_z; values are non-negative intensities.

#include "ps2f/common.hpp"
#include "ps2f/field.hpp"

namespace ps2f {

struct Volume3D {
    int nx = 0, ny = 0, nz = 0;
    double pitch_x = 0, pitch_y = 0, pitch_z = 0;  // meters
    double z_origin = 0;                           // defocus of plane 0 [m]
    std::vector<double> v;                         // [(z*ny + y)*nx + x]

    Volume3D() = default;
    Volume3D(int nx_, int ny_, int nz_, double px, double py, double pz, double z0 = 0.0)
        : nx(nx_), ny(ny_), nz(nz_), pitch_x(px), pitch_y(py), pitch_z(pz), z_origin(z0),
          v(static_cast<std::size_t>(nx_) * ny_ * nz_, 0.0) {
        if (nx < 1 || ny < 1 || nz < 1) throw config_error("Volume3D: dims must be >= 1");
        if (!(px > 0) || !(py > 0) || !(pz > 0)) throw config_error("Volume3D: pitch must be > 0");
    }

    std::size_t idx(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * ny + y) * nx + x;
    }
    double& at(int x, int y, int z) { return v[idx(x, y, z)]; }
    double at(int x, int y, int z) const { return v[idx(x, y, z)]; }

    double plane_z(int k) const { return z_origin + k * pitch_z; }
    double sum() const { return std::accumulate(v.begin(), v.end(), 0.0); }
    double max() const { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }

    bool same_shape(const Volume3D& o) const { return nx == o.nx && ny == o.ny && nz == o.nz; }

    // Centered z samples of every plane.
    std::vector<double> plane_depths() const {
        std::vector<double> z(nz);
        for (int k = 0; k < nz; ++k) z[k] = plane_z(k);
        return z;
    }
};

// Tri-linear resample onto new dims; the physical extent is preserved and the
// pitch rescaled accordingly (sample positions are cell centers).
inline Volume3D resample_trilinear(const Volume3D& src, int nx, int ny, int nz) {
    double ex = src.nx * src.pitch_x, ey = src.ny * src.pitch_y, ez = src.nz * src.pitch_z;
    Volume3D out(nx, ny, nz, ex / nx, ey / ny, ez / nz,
                 src.z_origin + 0.5 * src.pitch_z - 0.5 * (ez / nz));
    auto clamp_fetch = [&](int x, int y, int z) {
        x = std::clamp(x, 0, src.nx - 1);
        y = std::clamp(y, 0, src.ny - 1);
        z = std::clamp(z, 0, src.nz - 1);
        return src.at(x, y, z);
    };
    for (int z = 0; z < nz; ++z) {
        double fz = (z + 0.5) * src.nz / static_cast<double>(nz) - 0.5;
        int z0 = static_cast<int>(std::floor(fz));
        double tz = fz - z0;
        for (int y = 0; y < ny; ++y) {
            double fy = (y + 0.5) * src.ny / static_cast<double>(ny) - 0.5;
            int y0 = static_cast<int>(std::floor(fy));
            double ty = fy - y0;
            for (int x = 0; x < nx; ++x) {
                double fx = (x + 0.5) * src.nx / static_cast<double>(nx) - 0.5;
                int x0 = static_cast<int>(std::floor(fx));
                double tx = fx - x0;
                double acc = 0;
                for (int dz = 0; dz < 2; ++dz)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            acc += clamp_fetch(x0 + dx, y0 + dy, z0 + dz) *
                                   (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
                out.at(x, y, z) = acc;
            }
        }
    }
    return out;
}

}  // namespace ps2f
