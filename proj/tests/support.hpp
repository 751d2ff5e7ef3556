#pragma once
// Shared helpers for the test binaries: synthetic Gaussian PSF stacks and
// small random volumes with reproducible content.

#include <ps2f/mask.hpp>
#include <ps2f/rng.hpp>
#include <ps2f/volume.hpp>

namespace testsupport {

using namespace ps2f;

inline RealImage gaussian_image(const Grid2D& g, double cx, double cy, double sigma) {
    RealImage img(g);
    for (int iy = 0; iy < g.height; ++iy)
        for (int ix = 0; ix < g.width; ++ix)
            img.at(iy, ix) = std::exp(-0.5 * (sq((g.x(ix) - cx) / sigma) + sq((g.y(iy) - cy) / sigma)));
    img.normalize_sum();
    return img;
}

// Stack of centered Gaussian spots whose width varies linearly with |z|;
// one channel, unit-sum planes.
inline PsfStack gaussian_stack(int planes, double z_half_range, const Grid2D& sensor,
                               double sigma0, double sigma_slope_per_meter = 0.0) {
    PsfStack stack;
    stack.channels = {"full"};
    stack.sensor_grid = sensor;
    stack.psfs.assign(1, {});
    for (int k = 0; k < planes; ++k) {
        double z = planes == 1 ? 0.0 : -z_half_range + 2.0 * z_half_range * k / (planes - 1);
        stack.z_samples.push_back(z);
        double sigma = sigma0 * std::sqrt(1.0 + sq(sigma_slope_per_meter * z / sigma0));
        stack.psfs[0].push_back(gaussian_image(sensor, 0, 0, sigma));
    }
    return stack;
}

// Two-channel stack of mirrored off-axis Gaussian lobes that rotate with z
// (a cartoon of the polarized lobe pair).
inline PsfStack lobe_pair_stack(int planes, double z_half_range, const Grid2D& sensor,
                                double lobe_offset, double sigma) {
    PsfStack stack;
    stack.channels = {"0", "90"};
    stack.sensor_grid = sensor;
    stack.psfs.assign(2, {});
    for (int k = 0; k < planes; ++k) {
        double z = planes == 1 ? 0.0 : -z_half_range + 2.0 * z_half_range * k / (planes - 1);
        stack.z_samples.push_back(z);
        double ang = kPi / 2 * (z / z_half_range);
        for (int c = 0; c < 2; ++c) {
            double a = ang + c * kPi;
            RealImage img = gaussian_image(sensor, lobe_offset * std::cos(a),
                                           lobe_offset * std::sin(a), sigma);
            img.scale(0.25);  // polarized channel energy convention
            stack.psfs[c].push_back(img);
        }
    }
    return stack;
}

inline Volume3D random_volume(int nx, int ny, int nz, std::uint64_t seed, double density = 1.0) {
    Volume3D vol(nx, ny, nz, 1e-5, 1e-5, 1e-4, -0.5 * (nz - 1) * 1e-4);
    RandomStream rs(seed, 99);
    for (double& v : vol.v)
        if (rs.uniform() < density) v = rs.uniform();
    return vol;
}

}  // namespace testsupport
