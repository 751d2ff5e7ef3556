#pragma once
// Phase-only rotating-PSF mask synthesis and the polarized two-half assembly.
//
// design_dhpsf_mask runs alternating projections between the phase-only pupil
// constraint and the linear span of the requested GL modes, starting from the
// exact modal superposition. The modal projection solves the Gram system of
// the (near-orthogonal) discrete modes, so slightly non-orthogonal sampling is
// handled exactly.
//
// Partitioning the mask along the axis perpendicular to the in-focus lobe axis
// splits the aperture into two halves that each generate one rotating lobe;
// the assembly models ideal linear polarizers (50% unpolarized transmission,
// zero leak) on the two halves.

#include <optional>

#include "ps2f/analysis.hpp"
#include "ps2f/optics.hpp"

namespace ps2f {

struct PhaseMask {
    Grid2D grid;
    std::vector<double> phase;  // radians in [0, 2*pi), row-major
    double diameter = 0;        // clear aperture [m]
    int quantization_levels = 0;  // 0 = continuous

    PhaseMask() = default;
    PhaseMask(const Grid2D& g, double diam)
        : grid(g), phase(g.size(), 0.0), diameter(diam) {
        if (!(diam > 0)) throw config_error("PhaseMask: diameter must be > 0");
    }

    double& at(int iy, int ix) { return phase[static_cast<std::size_t>(iy) * grid.width + ix]; }
    double at(int iy, int ix) const { return phase[static_cast<std::size_t>(iy) * grid.width + ix]; }
};

// Unit-amplitude pupil field e^{i phase} inside the aperture, zero outside.
inline ComplexField pupil_field(const PhaseMask& mask) {
    ComplexField f(mask.grid);
    double r2 = sq(mask.diameter / 2.0);
    for (int iy = 0; iy < mask.grid.height; ++iy) {
        double y = mask.grid.y(iy);
        for (int ix = 0; ix < mask.grid.width; ++ix) {
            double x = mask.grid.x(ix);
            f.at(iy, ix) = (x * x + y * y <= r2) ? std::polar(1.0, mask.at(iy, ix)) : cd(0, 0);
        }
    }
    return f;
}

struct GSConfig {
    int iterations = 200;
    bool modal_projection = true;
    double convergence_tol = 1e-5;  // relative change of the modal-energy fraction

    void validate() const {
        if (iterations < 1) throw config_error("GSConfig: iterations must be >= 1");
    }
};

struct GSDiagnostics {
    std::vector<double> modal_energy_fraction;  // per iteration
    int iterations_run = 0;
    bool converged = false;
    double final_fraction() const {
        return modal_energy_fraction.empty() ? 0.0 : modal_energy_fraction.back();
    }
};

struct MaskDesign {
    PhaseMask mask;
    GSDiagnostics diagnostics;
};

namespace detail {

// Solve the hermitian positive-definite system G c = b by Cholesky.
inline std::vector<cd> solve_hpd(std::vector<cd> g, std::vector<cd> b) {
    const std::size_t n = b.size();
    // in-place LL^H factorization
    for (std::size_t j = 0; j < n; ++j) {
        double d = g[j * n + j].real();
        for (std::size_t k = 0; k < j; ++k) d -= std::norm(g[j * n + k]);
        if (d <= 0) throw numerical_error("modal Gram matrix not positive definite");
        double lj = std::sqrt(d);
        g[j * n + j] = lj;
        for (std::size_t i = j + 1; i < n; ++i) {
            cd s = g[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= g[i * n + k] * std::conj(g[j * n + k]);
            g[i * n + j] = s / lj;
        }
    }
    // forward then backward substitution
    for (std::size_t i = 0; i < n; ++i) {
        cd s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= g[i * n + k] * b[k];
        b[i] = s / g[i * n + i].real();
    }
    for (std::size_t ii = n; ii-- > 0;) {
        cd s = b[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= std::conj(g[k * n + ii]) * b[k];
        b[ii] = s / g[ii * n + ii].real();
    }
    return b;
}

}  // namespace detail

// Projector onto span{GL modes of a beam spec} on a discrete grid, with an
// optional constrained variant that pins the modal amplitudes to the target
// superposition (equal weights) and keeps only the fitted modal phases.
class ModalProjector {
public:
    ModalProjector(const GLBeamSpec& spec, const Grid2D& grid) {
        spec.validate();
        for (auto [n, m] : spec.modes) modes_.push_back(gl_mode(n, m, spec.waist, grid));
        const std::size_t k = modes_.size();
        gram_.resize(k * k);
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) gram_[i * k + j] = inner(modes_[i], modes_[j]);
    }

    std::vector<cd> coefficients(const ComplexField& f) const {
        const std::size_t k = modes_.size();
        std::vector<cd> b(k);
        for (std::size_t j = 0; j < k; ++j) b[j] = inner(modes_[j], f);
        return detail::solve_hpd(gram_, b);
    }

    ComplexField synthesize(const std::vector<cd>& c, const Grid2D& grid) const {
        ComplexField out(grid);
        for (std::size_t j = 0; j < modes_.size(); ++j)
            for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += c[j] * modes_[j].v[i];
        return out;
    }

    // Plain least-squares projection onto the span.
    ComplexField project(const ComplexField& f) const {
        return synthesize(coefficients(f), f.grid);
    }

    // Pin the coefficient magnitudes to the equal-weight target, keep phases.
    // A plain span projection lets the mode balance drift and the two-lobe
    // structure degrades with iteration; pinning the amplitudes preserves it.
    ComplexField project_fixed_amplitude(const ComplexField& f) const {
        std::vector<cd> c = coefficients(f);
        const double target = 1.0 / std::sqrt(static_cast<double>(modes_.size()));
        for (cd& cj : c) cj = (std::abs(cj) > 0) ? target * cj / std::abs(cj) : cd(target, 0);
        return synthesize(c, f.grid);
    }

private:
    std::vector<ComplexField> modes_;
    std::vector<cd> gram_;
};

// Phase-only mask whose PSF keeps the two-lobe rotating structure of the
// modal beam. Non-convergence is not an error; the best iterate is returned
// with diagnostics.
inline MaskDesign design_dhpsf_mask(const GLBeamSpec& spec, const System4f& sys, const Grid2D& grid,
                                    const GSConfig& cfg) {
    cfg.validate();
    sys.validate();
    ModalProjector projector(spec, grid);
    ComplexField modal = superpose_beam(spec, grid);

    const double r2 = sq(sys.aperture_diameter / 2.0);
    auto phase_only = [&](const ComplexField& f) {
        ComplexField out(grid);
        for (int iy = 0; iy < grid.height; ++iy) {
            double y = grid.y(iy);
            for (int ix = 0; ix < grid.width; ++ix) {
                double x = grid.x(ix);
                if (x * x + y * y <= r2) {
                    cd z = f.at(iy, ix);
                    out.at(iy, ix) = (std::abs(z) > 0) ? z / std::abs(z) : cd(1, 0);
                }
            }
        }
        return out;
    };

    GSDiagnostics diag;
    ComplexField u = modal;
    for (int it = 0; it < cfg.iterations; ++it) {
        ComplexField po = phase_only(u);
        // diagnostic: energy fraction of the phase-only field inside the span
        double e_po = sq(po.l2_norm());
        double e_span = sq(projector.project(po).l2_norm());
        double frac = e_po > 0 ? e_span / e_po : 0.0;
        diag.modal_energy_fraction.push_back(frac);
        diag.iterations_run = it + 1;
        if (!cfg.modal_projection) break;
        u = projector.project_fixed_amplitude(po);
        if (it > 0) {
            double prev = diag.modal_energy_fraction[it - 1];
            if (std::abs(frac - prev) < cfg.convergence_tol * std::max(frac, 1e-12)) {
                diag.converged = true;
                break;
            }
        }
    }

    PhaseMask mask(grid, sys.aperture_diameter);
    ComplexField fin = phase_only(u);
    for (std::size_t i = 0; i < fin.v.size(); ++i)
        mask.phase[i] = (fin.v[i] != cd(0, 0)) ? wrap_2pi(std::arg(fin.v[i])) : 0.0;
    return {std::move(mask), std::move(diag)};
}

// Snap every phase to the nearest of {2*pi*k/L} (circular metric; exact ties
// break toward the lower level).
inline PhaseMask quantize_phase(const PhaseMask& mask, int levels) {
    if (levels < 2) throw config_error("quantize_phase: levels must be >= 2");
    PhaseMask out = mask;
    double step = 2.0 * kPi / levels;
    for (double& p : out.phase) {
        int k0 = static_cast<int>(std::floor(p / step));
        double lo = p - k0 * step, hi = (k0 + 1) * step - p;
        int k = (lo <= hi) ? k0 : k0 + 1;
        p = wrap_2pi((k % levels) * step);
    }
    out.quantization_levels = levels;
    return out;
}

struct PolarizedMaskAssembly {
    PhaseMask mask;
    double partition_axis_angle = 0;  // orientation of the dividing line
    // half A carries the 0-degree polarizer, half B the 90-degree one
    std::array<std::string, 2> channel_labels = {"0", "90"};

    // Pupil field restricted to one half; halves are complementary and cover
    // the aperture (points exactly on the dividing line belong to half A).
    ComplexField half_field(int half) const {
        ComplexField f = pupil_field(mask);
        double nx = -std::sin(partition_axis_angle);
        double ny = std::cos(partition_axis_angle);
        for (int iy = 0; iy < mask.grid.height; ++iy) {
            double y = mask.grid.y(iy);
            for (int ix = 0; ix < mask.grid.width; ++ix) {
                double x = mask.grid.x(ix);
                double s = nx * x + ny * y;
                bool in_a = s >= 0;
                if ((half == 0) != in_a) f.at(iy, ix) = cd(0, 0);
            }
        }
        return f;
    }
};

inline PolarizedMaskAssembly partition_mask(const PhaseMask& mask, double axis_angle) {
    PolarizedMaskAssembly a;
    a.mask = mask;
    a.partition_axis_angle = wrap_pi(axis_angle);
    return a;
}

// Dividing-line angle chosen from the rendered in-focus PSF. The candidate
// cuts (parallel and perpendicular to the lobe axis) are scored by twin-lobe
// suppression: the half-aperture PSF's energy near the lobe it keeps against
// the energy near the lobe it is supposed to extinguish. The parallel cut is
// the physical winner (each pupil half feeds one helix lobe); a raw cluster
// count cannot tell the two cuts apart because the losing cut keeps both
// lobes bridged into one blob.
inline double auto_partition_axis(const PhaseMask& mask, const System4f& sys) {
    RealImage psf0 = render_field(pupil_field(mask), sys, 0.0).intensity();
    double lobe_axis = lobe_axis_angle(psf0);
    auto lobes = two_lobe_centroids(psf0);
    double sep = std::sqrt(sq(lobes[0][0] - lobes[1][0]) + sq(lobes[0][1] - lobes[1][1]));
    double radius = std::max(0.45 * sep, 3.0 * psf0.grid.pitch);
    double best_axis = lobe_axis, best_score = -1;
    for (double cand : {lobe_axis, wrap_pi(lobe_axis + kPi / 2.0)}) {
        PolarizedMaskAssembly a = partition_mask(mask, cand);
        RealImage half = render_field(a.half_field(0), sys, 0.0).intensity();
        double ea = disc_energy(half, lobes[0][0], lobes[0][1], radius);
        double eb = disc_energy(half, lobes[1][0], lobes[1][1], radius);
        double score = std::max(ea, eb) / std::max(1e-300, std::min(ea, eb));
        if (score > best_score) {
            best_score = score;
            best_axis = cand;
        }
    }
    return best_axis;
}

struct PsfStack {
    std::vector<double> z_samples;          // sorted defocus values [m]
    std::vector<std::string> channels;      // e.g. {"full"} or {"0", "90"}
    std::vector<std::vector<RealImage>> psfs;  // [channel][z]
    Grid2D sensor_grid;

    double pitch() const { return sensor_grid.pitch; }
    int n_channels() const { return static_cast<int>(channels.size()); }
    int n_planes() const { return static_cast<int>(z_samples.size()); }
    const RealImage& plane(int c, int k) const { return psfs[c][k]; }

    double z_min() const { return z_samples.front(); }
    double z_max() const { return z_samples.back(); }

    int nearest_plane(double z) const {
        int best = 0;
        double bd = std::abs(z - z_samples[0]);
        for (int k = 1; k < n_planes(); ++k) {
            double d = std::abs(z - z_samples[k]);
            if (d < bd) {
                bd = d;
                best = k;
            }
        }
        return best;
    }

    // Linear interpolation between adjacent planes; z must lie in range.
    RealImage interp_plane(int c, double z) const {
        if (z < z_min() - 1e-15 || z > z_max() + 1e-15)
            throw config_error("PsfStack: z outside stack range");
        if (n_planes() == 1) return psfs[c][0];
        int hi = 1;
        while (hi < n_planes() - 1 && z_samples[hi] < z) ++hi;
        int lo = hi - 1;
        double t = (z - z_samples[lo]) / (z_samples[hi] - z_samples[lo]);
        t = std::clamp(t, 0.0, 1.0);
        RealImage out = psfs[c][lo];
        for (std::size_t i = 0; i < out.v.size(); ++i)
            out.v[i] = (1 - t) * out.v[i] + t * psfs[c][hi].v[i];
        return out;
    }

    // Typical z spacing (median of gaps) for finite-difference step defaults.
    double z_spacing() const {
        if (n_planes() < 2) return 0.0;
        std::vector<double> gaps;
        for (int k = 1; k < n_planes(); ++k) gaps.push_back(z_samples[k] - z_samples[k - 1]);
        std::nth_element(gaps.begin(), gaps.begin() + gaps.size() / 2, gaps.end());
        return gaps[gaps.size() / 2];
    }
};

namespace detail {

inline void check_z_samples(const std::vector<double>& z) {
    if (z.empty()) throw config_error("render_psf_stack: empty z sample list");
    for (std::size_t i = 1; i < z.size(); ++i)
        if (!(z[i] > z[i - 1])) throw config_error("render_psf_stack: z samples must be sorted ascending");
}

}  // namespace detail

// Stack of per-depth PSFs for a full mask. One global normalization: the
// full-mask plane energy on the natural grid defines unity, so relative
// per-z (and per-channel) energy is preserved.
inline PsfStack render_psf_stack(const PhaseMask& mask, const System4f& sys,
                                 const std::vector<double>& z_samples, const Grid2D& sensor_grid,
                                 int pad_factor = 2) {
    detail::check_z_samples(z_samples);
    ComplexField pupil = pupil_field(mask);
    PsfStack stack;
    stack.z_samples = z_samples;
    stack.channels = {"full"};
    stack.sensor_grid = sensor_grid;
    stack.psfs.assign(1, std::vector<RealImage>(z_samples.size()));

    // phase-only pupil => identical plane energy at every dz (Parseval)
    double e_ref = render_field(pupil, sys, z_samples.front(), pad_factor).intensity().sum();
    parallel_for(z_samples.size(), [&](std::size_t k) {
        RealImage nat = render_field(pupil, sys, z_samples[k], pad_factor).intensity();
        nat.scale(1.0 / e_ref);
        stack.psfs[0][k] = resample_bilinear(nat, sensor_grid);
    });
    return stack;
}

// Stack for the polarized assembly: channels {0, 90} rendered from the two
// half-apertures with the ideal-polarizer factor 0.5 applied, normalized
// against the full-mask energy (so each channel plane carries ~0.25).
inline PsfStack render_psf_stack(const PolarizedMaskAssembly& assembly, const System4f& sys,
                                 const std::vector<double>& z_samples, const Grid2D& sensor_grid,
                                 int pad_factor = 2) {
    detail::check_z_samples(z_samples);
    PsfStack stack;
    stack.z_samples = z_samples;
    stack.channels = {assembly.channel_labels[0], assembly.channel_labels[1]};
    stack.sensor_grid = sensor_grid;
    stack.psfs.assign(2, std::vector<RealImage>(z_samples.size()));

    double e_ref = render_field(pupil_field(assembly.mask), sys, z_samples.front(), pad_factor)
                       .intensity()
                       .sum();
    for (int half = 0; half < 2; ++half) {
        ComplexField pupil = assembly.half_field(half);
        parallel_for(z_samples.size(), [&](std::size_t k) {
            RealImage nat = render_field(pupil, sys, z_samples[k], pad_factor).intensity();
            nat.scale(0.5 / e_ref);  // ideal polarizer on unpolarized light
            stack.psfs[half][k] = resample_bilinear(nat, sensor_grid);
        });
    }
    return stack;
}

}  // namespace ps2f
