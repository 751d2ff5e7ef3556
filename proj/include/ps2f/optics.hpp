#pragma once
// Scalar Fourier-optics core: 4f system geometry, Gauss-Laguerre (GL) beam
// modes, defocus phase, rotation law of GL-progression beams, and pupil-to-PSF
// rendering.
//
// Conventions:
//  - GL mode (n, m) maps to Laguerre-Gaussian LG_{p,l} with p = (n-|m|)/2 and
//    azimuthal order |m|, evaluated at the waist plane. Admissible pairs
//    require n >= |m| and n - |m| even. The azimuthal factor is exp(-i m
//    theta): with the defocus sign below this makes a beam of modes
//    n = V1 m + V2 rotate by +V1*atan(dz/z_R'), z_R' = lambda f1^2/(pi w0^2).
//    (The rotation direction is blind to the transform kernel sign - the
//    conjugate transform only point-reflects the pattern - so the azimuthal
//    sign is the one free choice that fixes the rotation law's sign.)
//  - The defocus factor is exp(+i (k/(2 f1)) (dz/f1) (u^2+v^2)).

#include <optional>
#include <utility>

#include "ps2f/common.hpp"
#include "ps2f/fft.hpp"
#include "ps2f/field.hpp"

namespace ps2f {

struct System4f {
    double f1 = 0;                 // objective-side focal length [m]
    double f2 = 0;                 // sensor-side focal length [m]
    double aperture_diameter = 0;  // clear aperture D [m]
    double wavelength = 0;         // lambda [m]

    void validate() const {
        if (!(f1 > 0) || !(f2 > 0) || !(aperture_diameter > 0) || !(wavelength > 0))
            throw config_error("System4f: all parameters must be strictly positive");
    }
    double wavenumber() const { return 2.0 * kPi / wavelength; }
};

struct GLBeamSpec {
    std::vector<std::pair<int, int>> modes;  // (n, m) pairs
    double waist = 0;                        // w0 [m]
    int slope = 0;                           // V1 in n = V1*m + V2
    int intercept = 0;                       // V2

    void validate() const {
        if (modes.empty()) throw config_error("GLBeamSpec: empty mode list");
        if (!(waist > 0)) throw config_error("GLBeamSpec: waist must be > 0");
        int prev_m = 0, diff = 0;
        for (std::size_t j = 0; j < modes.size(); ++j) {
            auto [n, m] = modes[j];
            if (m < 0) throw config_error("GLBeamSpec: m values must be non-negative");
            if (n != slope * m + intercept)
                throw config_error("GLBeamSpec: (n, m) not on the line n = V1*m + V2");
            if (n < std::abs(m) || (n - std::abs(m)) % 2 != 0)
                throw config_error("GLBeamSpec: invalid GL index pair (need n >= |m|, n - |m| even)");
            if (j == 1) diff = m - prev_m;
            if (j >= 2 && m - prev_m != diff)
                throw config_error("GLBeamSpec: m values must form an arithmetic progression");
            prev_m = m;
        }
    }
};

namespace detail {

// Generalized Laguerre polynomial L_p^alpha(x) by the standard recurrence.
inline double laguerre(int p, int alpha, double x) {
    if (p == 0) return 1.0;
    double lm1 = 1.0;
    double l = 1.0 + alpha - x;
    for (int k = 1; k < p; ++k) {
        double lp1 = ((2.0 * k + 1.0 + alpha - x) * l - (k + alpha) * lm1) / (k + 1.0);
        lm1 = l;
        l = lp1;
    }
    return l;
}

}  // namespace detail

// LG_{p,l} at the waist plane, unit discrete L2 norm on the grid.
inline ComplexField gl_mode(int n, int m, double waist, const Grid2D& grid) {
    grid.validate();
    if (!(waist > 0)) throw config_error("gl_mode: waist must be > 0");
    if (n < 0 || n < std::abs(m) || (n - std::abs(m)) % 2 != 0)
        throw config_error("gl_mode: invalid GL index pair (need n >= |m| >= 0, n - |m| even)");
    const int p = (n - std::abs(m)) / 2;
    const int la = std::abs(m);
    ComplexField f(grid);
    for (int iy = 0; iy < grid.height; ++iy) {
        double y = grid.y(iy);
        for (int ix = 0; ix < grid.width; ++ix) {
            double x = grid.x(ix);
            double r2 = x * x + y * y;
            double rho = std::sqrt(2.0 * r2) / waist;
            double amp = std::pow(rho, la) * detail::laguerre(p, la, 2.0 * r2 / (waist * waist)) *
                         std::exp(-r2 / (waist * waist));
            double theta = std::atan2(y, x);
            f.at(iy, ix) = amp * std::polar(1.0, -m * theta);
        }
    }
    f.normalize_l2();
    return f;
}

// Equal-weight coherent superposition of the requested modes, unit L2 norm.
inline ComplexField superpose_beam(const GLBeamSpec& spec, const Grid2D& grid) {
    spec.validate();
    ComplexField acc(grid);
    for (auto [n, m] : spec.modes) {
        ComplexField mode = gl_mode(n, m, spec.waist, grid);
        for (std::size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += mode.v[i];
    }
    acc.normalize_l2();
    return acc;
}

// Quadratic defocus factor of a 4f system displaced dz from focus.
inline ComplexField defocus_phase(const System4f& sys, double dz, const Grid2D& grid) {
    sys.validate();
    grid.validate();
    ComplexField f(grid);
    double c = sys.wavenumber() / (2.0 * sys.f1) * (dz / sys.f1);
    for (int iy = 0; iy < grid.height; ++iy) {
        double y = grid.y(iy);
        for (int ix = 0; ix < grid.width; ++ix) {
            double x = grid.x(ix);
            f.at(iy, ix) = std::polar(1.0, c * (x * x + y * y));
        }
    }
    return f;
}

// z_R' = lambda f1^2 / (pi w0^2): defocus scale of the rotation law.
inline double equivalent_rayleigh(const System4f& sys, double waist) {
    sys.validate();
    if (!(waist > 0)) throw config_error("equivalent_rayleigh: waist must be > 0");
    return sys.wavelength * sys.f1 * sys.f1 / (kPi * waist * waist);
}

// Lobe-axis angle of a GL-progression beam at defocus dz.
inline double rotation_angle(double dz, const GLBeamSpec& spec, const System4f& sys, double phi0) {
    return phi0 + spec.slope * std::atan(dz / equivalent_rayleigh(sys, spec.waist));
}

// Zero the pupil outside the clear aperture (circular clip at D/2).
inline void apply_aperture(ComplexField& pupil, double diameter) {
    double r = diameter / 2.0;
    for (int iy = 0; iy < pupil.grid.height; ++iy) {
        double y = pupil.grid.y(iy);
        for (int ix = 0; ix < pupil.grid.width; ++ix) {
            double x = pupil.grid.x(ix);
            if (x * x + y * y > r * r) pupil.at(iy, ix) = cd(0, 0);
        }
    }
}

// Propagate a pupil-plane field to the sensor plane of the 4f system at
// defocus dz. The pupil is aperture-clipped, multiplied by the defocus factor,
// zero-padded by pad_factor, and Fourier transformed. Output pitch is
// lambda * f2 / (padded pupil extent), origin centered.
inline ComplexField render_field(const ComplexField& pupil, const System4f& sys, double dz,
                                 int pad_factor = 2) {
    sys.validate();
    if (pad_factor < 1) throw config_error("render_field: pad_factor must be >= 1");
    if (sys.aperture_diameter > pupil.grid.extent_x() || sys.aperture_diameter > pupil.grid.extent_y())
        throw config_error("render_field: pupil grid does not cover the aperture");

    ComplexField work = pupil;
    apply_aperture(work, sys.aperture_diameter);
    if (dz != 0.0) {
        ComplexField df = defocus_phase(sys, dz, pupil.grid);
        for (std::size_t i = 0; i < work.v.size(); ++i) work.v[i] *= df.v[i];
    }

    const int ph = pad_factor * pupil.grid.height;
    const int pw = pad_factor * pupil.grid.width;
    std::vector<cd> buf(static_cast<std::size_t>(ph) * pw, cd(0, 0));
    const int oy = ph / 2 - pupil.grid.cy();
    const int ox = pw / 2 - pupil.grid.cx();
    for (int iy = 0; iy < pupil.grid.height; ++iy)
        for (int ix = 0; ix < pupil.grid.width; ++ix)
            buf[static_cast<std::size_t>(iy + oy) * pw + (ix + ox)] = work.at(iy, ix);

    ifftshift2(buf, ph, pw);
    fft2(buf, ph, pw, true);  // exp(+i...) kernel; scale is immaterial for PSFs
    fftshift2(buf, ph, pw);

    double sensor_pitch = sys.wavelength * sys.f2 / (pw * pupil.grid.pitch);
    ComplexField out(Grid2D(pw, ph, sensor_pitch));
    out.v = std::move(buf);
    return out;
}

// PSF intensity on the requested sensor grid, normalized to unit sum.
inline RealImage render_psf(const ComplexField& pupil, const System4f& sys, double dz,
                            const Grid2D& sensor_grid, int pad_factor = 2) {
    RealImage nat = render_field(pupil, sys, dz, pad_factor).intensity();
    RealImage out = resample_bilinear(nat, sensor_grid);
    out.normalize_sum();
    return out;
}

// All-ones pupil (clear aperture) helper.
inline ComplexField clear_pupil(const Grid2D& grid) { return ComplexField(grid, cd(1, 0)); }

// Airy first-zero radius 1.22 lambda f / D.
inline double lateral_diffraction_limit(const System4f& sys) {
    return 1.22 * sys.wavelength * sys.f1 / sys.aperture_diameter;
}

// Axial diffraction scale 4 lambda (f / D)^2.
inline double axial_diffraction_scale(const System4f& sys) {
    return 4.0 * sys.wavelength * sq(sys.f1 / sys.aperture_diameter);
}

}  // namespace ps2f
