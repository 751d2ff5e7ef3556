#pragma once
// Depth-map extraction and scoring: maximum-intensity-projection depth with a
// z-sum validity threshold, MAE/RMSE/MS-SSIM against a reference map, and
// Gaussian-fit resolution reports (lateral lobe width, axial spread).

#include <optional>

#include "ps2f/analysis.hpp"
#include "ps2f/mask.hpp"
#include "ps2f/volume.hpp"

namespace ps2f {

struct DepthMap {
    int width = 0, height = 0;
    std::vector<double> depth;     // meters, defined only where valid
    std::vector<std::uint8_t> valid;
    std::vector<double> z_levels;  // discrete depths indexed by the MIP

    double& at(int y, int x) { return depth[static_cast<std::size_t>(y) * width + x]; }
    double at(int y, int x) const { return depth[static_cast<std::size_t>(y) * width + x]; }
    bool is_valid(int y, int x) const { return valid[static_cast<std::size_t>(y) * width + x] != 0; }
};

struct ScoreReport {
    double mae = 0;      // meters
    double rmse = 0;     // meters
    double ms_ssim = 0;  // [0, 1]
    double coverage = 0; // fraction of mutually valid pixels
};

// Per-pixel argmax depth; pixels whose z-sum falls below threshold * (max
// per-pixel z-sum) are invalid. Ties break to the depth nearest focus (z = 0),
// then to the smaller z.
inline DepthMap mip_depth(const Volume3D& vol, double threshold = 0.02) {
    DepthMap dm;
    dm.width = vol.nx;
    dm.height = vol.ny;
    dm.depth.assign(static_cast<std::size_t>(vol.nx) * vol.ny, 0.0);
    dm.valid.assign(dm.depth.size(), 0);
    dm.z_levels = vol.plane_depths();

    std::vector<double> zsum(dm.depth.size(), 0.0);
    double zmax = 0;
    for (int y = 0; y < vol.ny; ++y)
        for (int x = 0; x < vol.nx; ++x) {
            double s = 0;
            for (int k = 0; k < vol.nz; ++k) s += vol.at(x, y, k);
            zsum[static_cast<std::size_t>(y) * vol.nx + x] = s;
            zmax = std::max(zmax, s);
        }
    for (int y = 0; y < vol.ny; ++y)
        for (int x = 0; x < vol.nx; ++x) {
            std::size_t i = static_cast<std::size_t>(y) * vol.nx + x;
            if (zmax <= 0 || zsum[i] < threshold * zmax || zsum[i] <= 0) continue;
            int best = 0;
            for (int k = 1; k < vol.nz; ++k) {
                double v = vol.at(x, y, k), b = vol.at(x, y, best);
                if (v > b) {
                    best = k;
                } else if (v == b) {
                    double zk = std::abs(dm.z_levels[k]), zb = std::abs(dm.z_levels[best]);
                    if (zk < zb || (zk == zb && dm.z_levels[k] < dm.z_levels[best])) best = k;
                }
            }
            dm.depth[i] = dm.z_levels[best];
            dm.valid[i] = 1;
        }
    return dm;
}

namespace detail {

// Separable Gaussian blur; window clipped at the borders (weights renormalized).
inline std::vector<double> gauss_blur(const std::vector<double>& img, int h, int w, int win,
                                      double sigma) {
    int half = win / 2;
    std::vector<double> kern(win);
    double s = 0;
    for (int i = 0; i < win; ++i) {
        kern[i] = std::exp(-0.5 * sq((i - half) / sigma));
        s += kern[i];
    }
    for (double& k : kern) k /= s;
    std::vector<double> tmp(img.size()), out(img.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0, norm = 0;
            for (int i = 0; i < win; ++i) {
                int xx = x + i - half;
                if (xx < 0 || xx >= w) continue;
                acc += kern[i] * img[static_cast<std::size_t>(y) * w + xx];
                norm += kern[i];
            }
            tmp[static_cast<std::size_t>(y) * w + x] = acc / norm;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0, norm = 0;
            for (int i = 0; i < win; ++i) {
                int yy = y + i - half;
                if (yy < 0 || yy >= h) continue;
                acc += kern[i] * tmp[static_cast<std::size_t>(yy) * w + x];
                norm += kern[i];
            }
            out[static_cast<std::size_t>(y) * w + x] = acc / norm;
        }
    return out;
}

struct SsimScale {
    double luminance = 0;
    double contrast_structure = 0;
};

inline SsimScale ssim_scale(const std::vector<double>& a, const std::vector<double>& b, int h, int w) {
    const double k1 = 0.01, k2 = 0.03, L = 1.0;
    const double c1 = sq(k1 * L), c2 = sq(k2 * L);
    int win = std::min(11, std::min(h, w));
    if (win % 2 == 0) --win;
    win = std::max(3, win);
    double sigma = 1.5 * win / 11.0;

    auto mul = [&](const std::vector<double>& x, const std::vector<double>& y) {
        std::vector<double> r(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] * y[i];
        return r;
    };
    std::vector<double> mu_a = gauss_blur(a, h, w, win, sigma);
    std::vector<double> mu_b = gauss_blur(b, h, w, win, sigma);
    std::vector<double> aa = gauss_blur(mul(a, a), h, w, win, sigma);
    std::vector<double> bb = gauss_blur(mul(b, b), h, w, win, sigma);
    std::vector<double> ab = gauss_blur(mul(a, b), h, w, win, sigma);
    double lum = 0, cs = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double va = aa[i] - sq(mu_a[i]);
        double vb = bb[i] - sq(mu_b[i]);
        double cov = ab[i] - mu_a[i] * mu_b[i];
        lum += (2 * mu_a[i] * mu_b[i] + c1) / (sq(mu_a[i]) + sq(mu_b[i]) + c1);
        cs += (2 * cov + c2) / (va + vb + c2);
    }
    return {lum / a.size(), cs / a.size()};
}

inline void downsample2(std::vector<double>& img, int& h, int& w) {
    int nh = h / 2, nw = w / 2;
    std::vector<double> out(static_cast<std::size_t>(nh) * nw);
    for (int y = 0; y < nh; ++y)
        for (int x = 0; x < nw; ++x)
            out[static_cast<std::size_t>(y) * nw + x] =
                0.25 * (img[static_cast<std::size_t>(2 * y) * w + 2 * x] +
                        img[static_cast<std::size_t>(2 * y) * w + 2 * x + 1] +
                        img[static_cast<std::size_t>(2 * y + 1) * w + 2 * x] +
                        img[static_cast<std::size_t>(2 * y + 1) * w + 2 * x + 1]);
    img = std::move(out);
    h = nh;
    w = nw;
}

}  // namespace detail

// Multi-scale SSIM on [0, 1] images, 5 scales, standard exponents
// (0.0448, 0.2856, 0.3001, 0.2363, 0.1333); scales beyond what the image size
// supports are dropped with the weights renormalized.
inline double ms_ssim(std::vector<double> a, std::vector<double> b, int h, int w) {
    static const double weights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    if (a.size() != b.size() || a.size() != static_cast<std::size_t>(h) * w)
        throw config_error("ms_ssim: shape mismatch");
    int scales = 5;
    {
        int hh = h, ww = w, s = 1;
        while (s < 5 && hh / 2 >= 4 && ww / 2 >= 4) {
            ++s;
            hh /= 2;
            ww /= 2;
        }
        scales = s;
    }
    double wsum = 0;
    for (int s = 0; s < scales; ++s) wsum += weights[s];
    double result = 1.0;
    for (int s = 0; s < scales; ++s) {
        detail::SsimScale sc = detail::ssim_scale(a, b, h, w);
        double expo = weights[s] / wsum;
        if (s == scales - 1) result *= std::pow(std::max(0.0, sc.luminance * sc.contrast_structure), expo);
        else result *= std::pow(std::max(0.0, sc.contrast_structure), expo);
        if (s + 1 < scales) {
            int hb = h, wb = w;
            detail::downsample2(a, h, w);
            detail::downsample2(b, hb, wb);
        }
    }
    return result;
}

// MAE/RMSE over the intersection of valid masks; MS-SSIM on depth maps
// normalized to [0, 1] over the shared z range with invalid pixels filled
// from the reference before windowing.
inline ScoreReport score(const DepthMap& pred, const DepthMap& truth) {
    if (pred.width != truth.width || pred.height != truth.height)
        throw config_error("score: depth map dimensions differ");
    double se = 0, ae = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.depth.size(); ++i)
        if (pred.valid[i] && truth.valid[i]) {
            double d = pred.depth[i] - truth.depth[i];
            ae += std::abs(d);
            se += d * d;
            ++n;
        }
    if (n == 0) throw config_error("score: no mutually valid pixels");
    ScoreReport r;
    r.mae = ae / n;
    r.rmse = std::sqrt(se / n);
    r.coverage = static_cast<double>(n) / pred.depth.size();

    double z0 = std::min(*std::min_element(truth.z_levels.begin(), truth.z_levels.end()),
                         *std::min_element(pred.z_levels.begin(), pred.z_levels.end()));
    double z1 = std::max(*std::max_element(truth.z_levels.begin(), truth.z_levels.end()),
                         *std::max_element(pred.z_levels.begin(), pred.z_levels.end()));
    double span = (z1 > z0) ? z1 - z0 : 1.0;
    std::vector<double> a(pred.depth.size()), b(pred.depth.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        double pv = pred.valid[i] ? pred.depth[i] : (truth.valid[i] ? truth.depth[i] : z0);
        double tv = truth.valid[i] ? truth.depth[i] : z0;
        if (!pred.valid[i] && !truth.valid[i]) pv = tv = z0;
        a[i] = (pv - z0) / span;
        b[i] = (tv - z0) / span;
    }
    r.ms_ssim = ms_ssim(std::move(a), std::move(b), pred.height, pred.width);
    return r;
}

struct GaussianFit2D {
    double amplitude = 0;
    double x0 = 0, y0 = 0;       // meters
    double sigma_x = 0, sigma_y = 0;  // meters
    double offset = 0;           // constant pedestal under the spot
    bool ok = false;
};

// Least-squares 2D Gaussian-plus-constant fit (Gauss-Newton, moment
// initialized). The constant term absorbs any diffuse pedestal under the
// spot, which otherwise inflates the fitted widths.
inline GaussianFit2D fit_gaussian_2d(const RealImage& img) {
    GaussianFit2D fit;
    double tot = img.sum();
    if (tot <= 0) return fit;
    // moment init
    double mx = 0, my = 0;
    for (int iy = 0; iy < img.grid.height; ++iy)
        for (int ix = 0; ix < img.grid.width; ++ix) {
            mx += img.at(iy, ix) * img.grid.x(ix);
            my += img.at(iy, ix) * img.grid.y(iy);
        }
    mx /= tot;
    my /= tot;
    double sxx = 0, syy = 0;
    for (int iy = 0; iy < img.grid.height; ++iy)
        for (int ix = 0; ix < img.grid.width; ++ix) {
            sxx += img.at(iy, ix) * sq(img.grid.x(ix) - mx);
            syy += img.at(iy, ix) * sq(img.grid.y(iy) - my);
        }
    double p[6] = {img.max(), mx, my, std::sqrt(std::max(sxx / tot, sq(img.grid.pitch / 4))),
                   std::sqrt(std::max(syy / tot, sq(img.grid.pitch / 4))), 0.0};

    for (int it = 0; it < 80; ++it) {
        double jtj[36] = {0}, jtr[6] = {0};
        for (int iy = 0; iy < img.grid.height; ++iy)
            for (int ix = 0; ix < img.grid.width; ++ix) {
                double dx = img.grid.x(ix) - p[1], dy = img.grid.y(iy) - p[2];
                double ex = std::exp(-0.5 * (sq(dx / p[3]) + sq(dy / p[4])));
                double gauss = p[0] * ex;
                double r = img.at(iy, ix) - gauss - p[5];
                double j[6] = {ex, gauss * dx / sq(p[3]), gauss * dy / sq(p[4]),
                               gauss * sq(dx) / (p[3] * sq(p[3])),
                               gauss * sq(dy) / (p[4] * sq(p[4])), 1.0};
                for (int i = 0; i < 6; ++i) {
                    jtr[i] += j[i] * r;
                    for (int k = 0; k < 6; ++k) jtj[i * 6 + k] += j[i] * j[k];
                }
            }
        // solve (JtJ + damping) d = Jtr by Gaussian elimination
        for (int i = 0; i < 6; ++i) jtj[i * 6 + i] *= 1.0 + 1e-9;
        double aug[6][7];
        for (int i = 0; i < 6; ++i) {
            for (int k = 0; k < 6; ++k) aug[i][k] = jtj[i * 6 + k];
            aug[i][6] = jtr[i];
        }
        bool singular = false;
        for (int col = 0; col < 6; ++col) {
            int piv = col;
            for (int row = col + 1; row < 6; ++row)
                if (std::abs(aug[row][col]) > std::abs(aug[piv][col])) piv = row;
            if (std::abs(aug[piv][col]) < 1e-30) {
                singular = true;
                break;
            }
            std::swap(aug[piv], aug[col]);
            for (int row = 0; row < 6; ++row) {
                if (row == col) continue;
                double f = aug[row][col] / aug[col][col];
                for (int k = col; k < 7; ++k) aug[row][k] -= f * aug[col][k];
            }
        }
        if (singular) break;
        double step = 0;
        for (int i = 0; i < 6; ++i) {
            double d = aug[i][6] / aug[i][i];
            p[i] += d;
            step += sq(d / (std::abs(p[i]) + 1e-30));
        }
        p[3] = std::abs(p[3]);
        p[4] = std::abs(p[4]);
        if (step < 1e-20) break;
    }
    if (!(p[0] > 0) || !(p[3] > 0) || !(p[4] > 0) || !std::isfinite(p[3]) || !std::isfinite(p[4]))
        return fit;
    fit.amplitude = p[0];
    fit.x0 = p[1];
    fit.y0 = p[2];
    fit.sigma_x = p[3];
    fit.sigma_y = p[4];
    fit.offset = p[5];
    fit.ok = true;
    return fit;
}

// Crop a square window (physical coordinates) around a point.
inline RealImage crop_around(const RealImage& img, double cx, double cy, int half_px) {
    int ix0 = static_cast<int>(std::lround(cx / img.grid.pitch)) + img.grid.cx();
    int iy0 = static_cast<int>(std::lround(cy / img.grid.pitch)) + img.grid.cy();
    int size = 2 * half_px + 1;
    RealImage out(Grid2D(size, size, img.grid.pitch));
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            int sy = iy0 + y - half_px, sx = ix0 + x - half_px;
            if (sy < 0 || sy >= img.grid.height || sx < 0 || sx >= img.grid.width) continue;
            out.at(y, x) = img.at(sy, sx);
        }
    return out;
}

// 2-sigma lateral width (meters) of each PSF lobe at the in-focus plane,
// defined per lobe as sigma_x + sigma_y of the least-squares Gaussian fit
// (with its pedestal term). The window spans a few lobe widths so the fit
// sees the lobe, not the wider halo. Polarized channels contribute one lobe
// each; a full-mask channel two.
inline std::vector<double> lobe_width_report(const PsfStack& stack, int fit_half_px = 4) {
    int k0 = stack.nearest_plane(0.0);
    std::vector<double> widths;
    for (int c = 0; c < stack.n_channels(); ++c) {
        const RealImage& psf = stack.plane(c, k0);
        std::vector<std::array<double, 2>> centers;
        if (stack.n_channels() >= 2) {
            centers.push_back(weighted_centroid(psf));
        } else {
            auto two = two_lobe_centroids(psf);
            centers.push_back(two[0]);
            centers.push_back(two[1]);
        }
        for (auto& ctr : centers) {
            GaussianFit2D fit = fit_gaussian_2d(crop_around(psf, ctr[0], ctr[1], fit_half_px));
            widths.push_back(fit.ok ? fit.sigma_x + fit.sigma_y
                                    : std::numeric_limits<double>::quiet_NaN());
        }
    }
    return widths;
}

// Median 2-sigma z spread (meters) over high-signal pixel columns, from 1D
// Gaussian fits of each column's z profile (moment-based; exact for Gaussian
// profiles). Degenerate columns yield NaN and are skipped.
inline double axial_spread_report(const Volume3D& vol, double column_threshold = 0.25) {
    std::vector<double> zsum(static_cast<std::size_t>(vol.nx) * vol.ny, 0.0);
    double zmax = 0;
    for (int y = 0; y < vol.ny; ++y)
        for (int x = 0; x < vol.nx; ++x) {
            double s = 0;
            for (int k = 0; k < vol.nz; ++k) s += vol.at(x, y, k);
            zsum[static_cast<std::size_t>(y) * vol.nx + x] = s;
            zmax = std::max(zmax, s);
        }
    std::vector<double> spreads;
    for (int y = 0; y < vol.ny; ++y)
        for (int x = 0; x < vol.nx; ++x) {
            double s = zsum[static_cast<std::size_t>(y) * vol.nx + x];
            if (s < column_threshold * zmax || s <= 0) continue;
            double mean = 0;
            for (int k = 0; k < vol.nz; ++k) mean += vol.at(x, y, k) * vol.plane_z(k);
            mean /= s;
            double var = 0;
            for (int k = 0; k < vol.nz; ++k) var += vol.at(x, y, k) * sq(vol.plane_z(k) - mean);
            var /= s;
            if (var > 0) spreads.push_back(2.0 * std::sqrt(var));
        }
    if (spreads.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::nth_element(spreads.begin(), spreads.begin() + spreads.size() / 2, spreads.end());
    return spreads[spreads.size() / 2];
}

}  // namespace ps2f
