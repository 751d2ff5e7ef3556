#pragma once
// Procedural test scenes: skew lines (depth varying along the line), random
// branching tube trees, and the bundled deterministic smoke scene.

#include "ps2f/rng.hpp"
#include "ps2f/volume.hpp"

namespace ps2f {

// A straight line through the volume center at in-plane angle phi, one voxel
// thick laterally, whose plane index varies linearly along the line reaching
// +- z_slope_planes at t = +- half_len_frac * nx. With half_len_frac > 0.5 the
// line crosses the lateral borders, so no endpoint is visible in the volume.
inline Volume3D make_skew_line(int nx, int ny, int nz, double pitch_xy, double pitch_z, double phi,
                               double z_slope_planes, double intensity = 1.0,
                               double half_len_frac = 0.45) {
    Volume3D vol(nx, ny, nz, pitch_xy, pitch_xy, pitch_z, -0.5 * (nz - 1) * pitch_z);
    double ux = std::cos(phi), uy = std::sin(phi);
    double half_len = half_len_frac * std::min(nx, ny);
    int steps = static_cast<int>(half_len * 8);
    for (int s = -steps; s <= steps; ++s) {
        double t = half_len * s / steps;  // voxels along the line
        double x = nx / 2.0 + t * ux;
        double y = ny / 2.0 + t * uy;
        double zf = (nz - 1) / 2.0 + z_slope_planes * (t / half_len);
        int xi = static_cast<int>(std::lround(x));
        int yi = static_cast<int>(std::lround(y));
        int zi = static_cast<int>(std::lround(zf));
        if (xi < 0 || xi >= nx || yi < 0 || yi >= ny || zi < 0 || zi >= nz) continue;
        vol.at(xi, yi, zi) = intensity;
    }
    return vol;
}

// Random branching tree of tubes, vaguely vascular: a trunk random-walks
// through the volume and sheds branches. Deterministic per seed.
inline Volume3D make_tree(int nx, int ny, int nz, double pitch_xy, double pitch_z,
                          std::uint64_t seed, int branches = 10, double radius_vox = 1.3) {
    Volume3D vol(nx, ny, nz, pitch_xy, pitch_xy, pitch_z, -0.5 * (nz - 1) * pitch_z);
    RandomStream rs(seed, 0x7265657472ULL);

    auto stamp = [&](double x, double y, double z) {
        int r = static_cast<int>(std::ceil(radius_vox));
        for (int dz = -r; dz <= r; ++dz)
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    int xi = static_cast<int>(std::lround(x)) + dx;
                    int yi = static_cast<int>(std::lround(y)) + dy;
                    int zi = static_cast<int>(std::lround(z)) + dz;
                    if (xi < 0 || xi >= nx || yi < 0 || yi >= ny || zi < 0 || zi >= nz) continue;
                    if (dx * dx + dy * dy + dz * dz <= radius_vox * radius_vox)
                        vol.at(xi, yi, zi) = 1.0;
                }
    };

    struct Walker {
        double x, y, z, dx, dy, dz;
        int steps;
    };
    std::vector<Walker> queue;
    queue.push_back({nx * (0.3 + 0.4 * rs.uniform()), ny * (0.3 + 0.4 * rs.uniform()),
                     nz * (0.2 + 0.2 * rs.uniform()), 0.3 * (rs.uniform() - 0.5),
                     0.3 * (rs.uniform() - 0.5), 0.8, static_cast<int>(2.2 * std::min(nx, ny))});
    int spawned = 1;
    while (!queue.empty()) {
        Walker w = queue.back();
        queue.pop_back();
        for (int s = 0; s < w.steps; ++s) {
            stamp(w.x, w.y, w.z);
            w.dx += 0.25 * (rs.uniform() - 0.5);
            w.dy += 0.25 * (rs.uniform() - 0.5);
            w.dz += 0.25 * (rs.uniform() - 0.5);
            double n = std::sqrt(w.dx * w.dx + w.dy * w.dy + w.dz * w.dz) + 1e-12;
            w.x += w.dx / n;
            w.y += w.dy / n;
            w.z += 0.6 * w.dz / n;  // axial motion slower, trees mostly span z gradually
            if (w.x < 2 || w.x > nx - 3 || w.y < 2 || w.y > ny - 3 || w.z < 1 || w.z > nz - 2) break;
            if (spawned < branches && rs.uniform() < 1.8 / w.steps * branches) {
                ++spawned;
                double ang = 2 * kPi * rs.uniform();
                queue.push_back({w.x, w.y, w.z, std::cos(ang), std::sin(ang),
                                 (rs.uniform() - 0.5) * 1.4, w.steps / 2});
            }
        }
    }
    return vol;
}

// Bundled 64^3 smoke-test scene: fixed-seed tree at the standard voxel pitch.
inline Volume3D make_smoke_scene() {
    return make_tree(64, 64, 64, 6.875e-6, 78.125e-6, 42, 8);
}

}  // namespace ps2f
