#pragma once
// Fisher information and Cramer-Rao lower bounds for point sources and line
// targets imaged through a PSF stack.
//
// Point sources: FI over theta = (x, y, z) with mu_theta the photon-scaled PSF
// image; FI_ij = sum_k (1 / (mu(k) + beta)) d_i mu(k) d_j mu(k).
// Lines: theta = (z, phi) with psi_theta a unit line of orientation phi
// rasterized at the patch center, convolved with the PSF at depth z, scaled to
// the channel photon count. For a channel pair the information adds.
//
// Partials are central finite differences on z-interpolated stacks; the line
// is re-rendered at perturbed parameters, the point PSF is Fourier-shifted.

#include "ps2f/forward.hpp"

namespace ps2f {

struct PhotonModel {
    double signal_photons = 0;  // N
    double background = 0;      // beta, photons per pixel

    void validate() const {
        if (!(signal_photons > 0)) throw config_error("PhotonModel: N must be > 0");
        if (background < 0) throw config_error("PhotonModel: beta must be >= 0");
    }
};

struct LinePatch {
    double z = 0;           // depth at patch center [m]
    double phi = 0;         // line orientation [rad), modulo pi
    int patch_size = 64;    // pixels
    double line_width = 1;  // pixels

    void validate() const {
        if (patch_size < 16) throw config_error("LinePatch: patch_size must be >= 16");
        if (!(line_width > 0)) throw config_error("LinePatch: line_width must be > 0");
    }
};

struct FisherMatrix {
    int dim = 0;
    std::array<double, 9> m{};  // row-major, top-left dim x dim block used

    double& at(int i, int j) { return m[i * 3 + j]; }
    double at(int i, int j) const { return m[i * 3 + j]; }

    FisherMatrix& operator+=(const FisherMatrix& o) {
        if (dim != o.dim) throw config_error("FisherMatrix: dimension mismatch");
        for (int i = 0; i < 9; ++i) m[i] += o.m[i];
        return *this;
    }
};

struct FdSteps {
    double dz = 0;    // meters; 0 = auto (quarter of the stack z spacing)
    double dphi = 0;  // radians; 0 = auto (0.05 degree; small enough that the
                      // finite differences sit in their asymptotic regime)
    double dxy = 0;   // meters; 0 = auto (quarter of the sensor pitch)
};

// One PSF image source feeding a line-target Fisher sum: a stack channel plus
// the photon count assigned to it.
struct LineChannel {
    const PsfStack* stack = nullptr;
    int channel = 0;
    double photons = 0;
};

// Single-mask budget: the full photon count on one channel.
inline std::vector<LineChannel> line_channels_single(const PsfStack& stack, const PhotonModel& model,
                                                     int channel = 0) {
    model.validate();
    return {{&stack, channel, model.signal_photons}};
}

// Lobe-pair budget: a quarter of the photons per polarized channel (each lobe
// carries 25% of the light a full-aperture mask would collect).
inline std::vector<LineChannel> line_channels_pair(const PsfStack& stack, const PhotonModel& model) {
    model.validate();
    if (stack.n_channels() < 2) throw config_error("line_channels_pair: stack has fewer than 2 channels");
    return {{&stack, 0, model.signal_photons / 4.0}, {&stack, 1, model.signal_photons / 4.0}};
}

namespace detail {

// 'same'-cropped linear convolution of two images on a common pitch.
inline RealImage conv_same(const RealImage& img, const RealImage& kernel) {
    const int h = img.grid.height, w = img.grid.width;
    const int ph = next_fft_size(h + kernel.grid.height - 1);
    const int pw = next_fft_size(w + kernel.grid.width - 1);
    std::vector<cd> a(static_cast<std::size_t>(ph) * pw, cd(0, 0));
    std::vector<cd> b(static_cast<std::size_t>(ph) * pw, cd(0, 0));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) a[static_cast<std::size_t>(y) * pw + x] = img.at(y, x);
    int cy = kernel.grid.cy(), cx = kernel.grid.cx();
    for (int y = 0; y < kernel.grid.height; ++y)
        for (int x = 0; x < kernel.grid.width; ++x) {
            int py = ((y - cy) % ph + ph) % ph;
            int px = ((x - cx) % pw + pw) % pw;
            b[static_cast<std::size_t>(py) * pw + px] = kernel.at(y, x);
        }
    fft2(a, ph, pw, false);
    fft2(b, ph, pw, false);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] *= b[i];
    fft2(a, ph, pw, true);
    RealImage out(img.grid);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(y, x) = a[static_cast<std::size_t>(y) * pw + x].real();
    return out;
}

// Anti-aliased line through the patch center: unit intensity core of the given
// width (pixels) with a smooth falloff over one pixel; phi is modulo pi by
// construction. The falloff is the quintic smootherstep, C2 in the distance,
// so rendered line images are twice differentiable in (z, phi) and the
// finite-difference Fisher sums converge quadratically under step halving
// (profiles with derivative kinks block that convergence).
inline RealImage rasterize_line(int patch_size, double pitch, double phi, double line_width) {
    Grid2D g(patch_size, patch_size, pitch);
    RealImage img(g);
    double nx = -std::sin(phi), ny = std::cos(phi);  // unit normal
    double half = 0.5 * (line_width - 1.0);
    for (int iy = 0; iy < patch_size; ++iy)
        for (int ix = 0; ix < patch_size; ++ix) {
            double d = std::abs(nx * (ix - g.cx()) + ny * (iy - g.cy()));  // pixels
            double t = d - half;
            if (t <= 0)
                img.at(iy, ix) = 1.0;
            else if (t >= 1.0)
                img.at(iy, ix) = 0.0;
            else
                img.at(iy, ix) = 1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
        }
    return img;
}

// Expected signal (no background) of a line at (z, phi) through one channel,
// scaled so the patch total equals n_photons.
inline RealImage line_signal(const PsfStack& stack, int channel, const LinePatch& patch,
                             double z, double phi, double n_photons) {
    RealImage line = rasterize_line(patch.patch_size, stack.pitch(), phi, patch.line_width);
    RealImage psf = stack.interp_plane(channel, z);
    RealImage img = conv_same(line, psf);
    double s = img.sum();
    if (s <= 0) throw numerical_error("line_signal: empty line image");
    img.scale(n_photons / s);
    return img;
}

inline void fisher_accumulate(FisherMatrix& fi, const RealImage& mean,
                              const std::vector<RealImage>& partials, double beta) {
    const int dim = fi.dim;
    for (std::size_t k = 0; k < mean.v.size(); ++k) {
        double denom = mean.v[k] + beta;
        if (denom <= 1e-12) continue;
        for (int i = 0; i < dim; ++i)
            for (int j = i; j < dim; ++j) fi.at(i, j) += partials[i].v[k] * partials[j].v[k] / denom;
    }
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < i; ++j) fi.at(i, j) = fi.at(j, i);
}

}  // namespace detail

// Expected line image (signal scaled to N over the patch, plus beta per pixel).
inline RealImage render_line_image(const PsfStack& stack, const LinePatch& patch,
                                   const PhotonModel& model, int channel = 0) {
    patch.validate();
    model.validate();
    RealImage img = detail::line_signal(stack, channel, patch, patch.z, patch.phi,
                                        model.signal_photons);
    for (double& x : img.v) x += model.background;
    return img;
}

// 2x2 Fisher matrix over theta = (z, phi) for one or more channels; channel
// matrices add (independent images of the same scene parameters).
inline FisherMatrix fisher_line(const std::vector<LineChannel>& channels, const LinePatch& patch,
                                double beta, FdSteps steps = {}) {
    patch.validate();
    if (channels.empty()) throw config_error("fisher_line: no channels");
    const PsfStack& ref = *channels.front().stack;
    double dz = steps.dz > 0 ? steps.dz : ref.z_spacing() / 4.0;
    double dphi = steps.dphi > 0 ? steps.dphi : deg2rad(0.05);
    if (!(dz > 0)) throw config_error("fisher_line: cannot derive dz step from a single-plane stack");
    if (patch.z - dz < ref.z_min() || patch.z + dz > ref.z_max())
        throw config_error("fisher_line: z at stack boundary (needs margin for finite differences)");

    FisherMatrix fi;
    fi.dim = 2;
    for (const LineChannel& ch : channels) {
        RealImage mean = detail::line_signal(*ch.stack, ch.channel, patch, patch.z, patch.phi, ch.photons);
        RealImage zp = detail::line_signal(*ch.stack, ch.channel, patch, patch.z + dz, patch.phi, ch.photons);
        RealImage zm = detail::line_signal(*ch.stack, ch.channel, patch, patch.z - dz, patch.phi, ch.photons);
        RealImage pp = detail::line_signal(*ch.stack, ch.channel, patch, patch.z, patch.phi + dphi, ch.photons);
        RealImage pm = detail::line_signal(*ch.stack, ch.channel, patch, patch.z, patch.phi - dphi, ch.photons);
        std::vector<RealImage> partials(2, RealImage(mean.grid));
        for (std::size_t k = 0; k < mean.v.size(); ++k) {
            partials[0].v[k] = (zp.v[k] - zm.v[k]) / (2 * dz);
            partials[1].v[k] = (pp.v[k] - pm.v[k]) / (2 * dphi);
        }
        FisherMatrix part;
        part.dim = 2;
        detail::fisher_accumulate(part, mean, partials, beta);
        fi += part;
    }
    return fi;
}

namespace detail {

// Subpixel translation by (dx, dy) meters via a Fourier phase ramp.
inline RealImage fourier_shift(const RealImage& img, double dx, double dy) {
    const int h = img.grid.height, w = img.grid.width;
    std::vector<cd> buf(img.v.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = img.v[i];
    fft2(buf, h, w, false);
    double sx = dx / img.grid.pitch, sy = dy / img.grid.pitch;
    for (int y = 0; y < h; ++y) {
        int fy = (y <= h / 2) ? y : y - h;
        for (int x = 0; x < w; ++x) {
            int fx = (x <= w / 2) ? x : x - w;
            double ph = -2.0 * kPi * (fx * sx / w + fy * sy / h);
            buf[static_cast<std::size_t>(y) * w + x] *= std::polar(1.0, ph);
        }
    }
    fft2(buf, h, w, true);
    RealImage out(img.grid);
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = buf[i].real();
    return out;
}

}  // namespace detail

// 3x3 Fisher matrix over theta = (x, y, z) for an isolated point source.
inline FisherMatrix fisher_point(const PsfStack& stack, std::array<double, 3> position,
                                 const PhotonModel& model, FdSteps steps = {}, int channel = 0) {
    model.validate();
    double dxy = steps.dxy > 0 ? steps.dxy : stack.pitch() / 4.0;
    double dz = steps.dz > 0 ? steps.dz : stack.z_spacing() / 4.0;
    if (!(dz > 0)) throw config_error("fisher_point: cannot derive dz step from a single-plane stack");
    auto [x0, y0, z0] = position;
    if (z0 - dz < stack.z_min() || z0 + dz > stack.z_max())
        throw config_error("fisher_point: position at stack z boundary");
    const Grid2D& g = stack.sensor_grid;
    if (std::abs(x0) + dxy > g.extent_x() / 2 || std::abs(y0) + dxy > g.extent_y() / 2)
        throw config_error("fisher_point: position at sensor boundary");

    auto mu = [&](double x, double y, double z) {
        RealImage img = detail::fourier_shift(stack.interp_plane(channel, z), x, y);
        img.scale(model.signal_photons);
        return img;
    };
    RealImage mean = mu(x0, y0, z0);
    RealImage xp = mu(x0 + dxy, y0, z0), xm = mu(x0 - dxy, y0, z0);
    RealImage yp = mu(x0, y0 + dxy, z0), ym = mu(x0, y0 - dxy, z0);
    RealImage zp = mu(x0, y0, z0 + dz), zm = mu(x0, y0, z0 - dz);
    std::vector<RealImage> partials(3, RealImage(mean.grid));
    for (std::size_t k = 0; k < mean.v.size(); ++k) {
        partials[0].v[k] = (xp.v[k] - xm.v[k]) / (2 * dxy);
        partials[1].v[k] = (yp.v[k] - ym.v[k]) / (2 * dxy);
        partials[2].v[k] = (zp.v[k] - zm.v[k]) / (2 * dz);
    }
    FisherMatrix fi;
    fi.dim = 3;
    detail::fisher_accumulate(fi, mean, partials, model.background);
    return fi;
}

// sqrt of the CRLB diagonal: sqrt([FI^-1]_ii). Singular or ill-conditioned
// matrices yield NaN entries rather than exceptions.
inline std::vector<double> crlb_extract(const FisherMatrix& fi, double cond_threshold = 1e12) {
    const int n = fi.dim;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> out(n, nan);
    // inverse via adjugate for the 2x2 / 3x3 cases in use
    double det = 0;
    std::array<double, 9> inv{};
    if (n == 2) {
        det = fi.at(0, 0) * fi.at(1, 1) - fi.at(0, 1) * fi.at(1, 0);
        inv[0] = fi.at(1, 1);
        inv[4] = fi.at(0, 0);
        inv[1] = -fi.at(0, 1);
        inv[3] = -fi.at(1, 0);
    } else if (n == 3) {
        inv[0] = fi.at(1, 1) * fi.at(2, 2) - fi.at(1, 2) * fi.at(2, 1);
        inv[1] = fi.at(0, 2) * fi.at(2, 1) - fi.at(0, 1) * fi.at(2, 2);
        inv[2] = fi.at(0, 1) * fi.at(1, 2) - fi.at(0, 2) * fi.at(1, 1);
        inv[3] = fi.at(1, 2) * fi.at(2, 0) - fi.at(1, 0) * fi.at(2, 2);
        inv[4] = fi.at(0, 0) * fi.at(2, 2) - fi.at(0, 2) * fi.at(2, 0);
        inv[5] = fi.at(0, 2) * fi.at(1, 0) - fi.at(0, 0) * fi.at(1, 2);
        inv[6] = fi.at(1, 0) * fi.at(2, 1) - fi.at(1, 1) * fi.at(2, 0);
        inv[7] = fi.at(0, 1) * fi.at(2, 0) - fi.at(0, 0) * fi.at(2, 1);
        inv[8] = fi.at(0, 0) * fi.at(1, 1) - fi.at(0, 1) * fi.at(1, 0);
        det = fi.at(0, 0) * inv[0] + fi.at(0, 1) * inv[3] + fi.at(0, 2) * inv[6];
    } else {
        throw config_error("crlb_extract: dim must be 2 or 3");
    }
    if (!(det > 0) || !std::isfinite(det)) return out;
    double norm_a = 0, norm_inv = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            norm_a += sq(fi.at(i, j));
            norm_inv += sq(inv[i * 3 + j] / det);
        }
    if (std::sqrt(norm_a * norm_inv) > cond_threshold) return out;
    for (int i = 0; i < n; ++i) {
        double d = inv[i * 3 + i] / det;
        out[i] = d > 0 ? std::sqrt(d) : nan;
    }
    return out;
}

struct CrlbMap {
    std::vector<double> z_grid;            // meters
    std::vector<double> phi_grid;          // radians
    std::vector<double> sqrt_crlb_z;       // [iz * nphi + iphi], meters (NaN = singular)
    std::vector<double> sqrt_crlb_phi;     // radians
    PhotonModel photon_model;
    std::string psf_label;

    double at_z(int iz, int ip) const { return sqrt_crlb_z[static_cast<std::size_t>(iz) * phi_grid.size() + ip]; }
    double at_phi(int iz, int ip) const { return sqrt_crlb_phi[static_cast<std::size_t>(iz) * phi_grid.size() + ip]; }

    struct Stats {
        double mean = 0, stddev = 0;
        int finite_cells = 0, peak_count = 0;
    };

    // Mean/std over finite cells plus the phi-ridge peak count: cells that are
    // strict local maxima along phi (cyclic) and at least 1.5x their z-row
    // median. Singular cells rank as +inf, so an isolated singular cell is a
    // peak; runs of singular cells are not strict maxima and do not count.
    Stats stats_z() const {
        Stats s{};
        double acc = 0, acc2 = 0;
        const int nz = static_cast<int>(z_grid.size()), np = static_cast<int>(phi_grid.size());
        for (double x : sqrt_crlb_z)
            if (std::isfinite(x)) {
                acc += x;
                acc2 += x * x;
                ++s.finite_cells;
            }
        if (s.finite_cells > 0) {
            s.mean = acc / s.finite_cells;
            s.stddev = std::sqrt(std::max(0.0, acc2 / s.finite_cells - sq(s.mean)));
        }
        auto val = [&](int iz, int ip) {
            double x = at_z(iz, (ip % np + np) % np);
            return std::isfinite(x) ? x : std::numeric_limits<double>::infinity();
        };
        for (int iz = 0; iz < nz; ++iz) {
            std::vector<double> row;
            for (int ip = 0; ip < np; ++ip)
                if (std::isfinite(at_z(iz, ip))) row.push_back(at_z(iz, ip));
            if (row.empty()) continue;
            std::nth_element(row.begin(), row.begin() + row.size() / 2, row.end());
            double med = row[row.size() / 2];
            for (int ip = 0; ip < np; ++ip) {
                double v = val(iz, ip);
                if (v > val(iz, ip - 1) && v > val(iz, ip + 1) && v > 1.5 * med) ++s.peak_count;
            }
        }
        return s;
    }

    Stats stats_phi() const {
        Stats s{};
        double acc = 0, acc2 = 0;
        for (double x : sqrt_crlb_phi)
            if (std::isfinite(x)) {
                acc += x;
                acc2 += x * x;
                ++s.finite_cells;
            }
        if (s.finite_cells > 0) {
            s.mean = acc / s.finite_cells;
            s.stddev = std::sqrt(std::max(0.0, acc2 / s.finite_cells - sq(s.mean)));
        }
        return s;
    }
};

// Full sqrt-CRLB surface over (z, phi) for a channel set.
inline CrlbMap crlb_map(const std::vector<LineChannel>& channels, const std::vector<double>& z_grid,
                        const std::vector<double>& phi_grid, const PhotonModel& model,
                        int patch_size = 64, FdSteps steps = {}, std::string label = "") {
    if (z_grid.empty() || phi_grid.empty()) throw config_error("crlb_map: empty grids");
    model.validate();
    CrlbMap map;
    map.z_grid = z_grid;
    map.phi_grid = phi_grid;
    map.photon_model = model;
    map.psf_label = std::move(label);
    const std::size_t n = z_grid.size() * phi_grid.size();
    map.sqrt_crlb_z.assign(n, 0);
    map.sqrt_crlb_phi.assign(n, 0);
    parallel_for(n, [&](std::size_t cell) {
        int iz = static_cast<int>(cell / phi_grid.size());
        int ip = static_cast<int>(cell % phi_grid.size());
        LinePatch patch;
        patch.z = z_grid[iz];
        patch.phi = phi_grid[ip];
        patch.patch_size = patch_size;
        FisherMatrix fi = fisher_line(channels, patch, model.background, steps);
        auto crlb = crlb_extract(fi);
        map.sqrt_crlb_z[cell] = crlb[0];
        map.sqrt_crlb_phi[cell] = crlb[1];
    });
    return map;
}

}  // namespace ps2f
