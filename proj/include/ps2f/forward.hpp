#pragma once
// Scene-to-measurement simulation: occlusion-aware surface extraction,
// depth-sliced convolution imaging (per-channel sum over z of h_c(z) * s(z)),
// sensor noise, and polarization Bayer mosaicing.
//
// Convolutions run in the frequency domain with linear-convolution padding
// (no circular wrap). ImagingOperator caches the padded OTFs so repeated
// forward/adjoint applications (the reconstruction inner loop) stay cheap.

#include "ps2f/fft.hpp"
#include "ps2f/mask.hpp"
#include "ps2f/rng.hpp"
#include "ps2f/volume.hpp"

namespace ps2f {

struct NoiseConfig {
    bool poisson = true;
    double read_sigma = 0.0;  // fraction of the noiseless image maximum
    std::uint64_t seed = 0;

    void validate() const {
        if (read_sigma < 0) throw config_error("NoiseConfig: read_sigma must be >= 0");
    }
};

struct NoiseMeta {
    bool poisson = false;
    double read_sigma = 0.0;
};

struct Measurement {
    std::vector<std::string> labels;  // subset of {"0","45","90","135","full"}
    std::vector<RealImage> images;
    NoiseMeta noise;

    int find(const std::string& label) const {
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == label) return static_cast<int>(i);
        return -1;
    }
    const RealImage& channel(const std::string& label) const {
        int i = find(label);
        if (i < 0) throw config_error("Measurement: missing channel " + label);
        return images[i];
    }
    double max() const {
        double m = 0;
        for (const auto& img : images) m = std::max(m, img.max());
        return m;
    }
};

// Keep only surface voxels visible from the camera side (low z index first):
// pass 1 zeroes voxels whose 6 neighbors are all occupied (interior), pass 2
// walks each (x, y) column along +z and zeroes everything behind the first
// contiguous occupied run of the extracted shell.
inline Volume3D surface_extract(const Volume3D& vol) {
    Volume3D shell = vol;
    auto occupied = [&](int x, int y, int z) {
        if (x < 0 || x >= vol.nx || y < 0 || y >= vol.ny || z < 0 || z >= vol.nz) return false;
        return vol.at(x, y, z) > 0.0;
    };
    for (int z = 0; z < vol.nz; ++z)
        for (int y = 0; y < vol.ny; ++y)
            for (int x = 0; x < vol.nx; ++x) {
                if (!(vol.at(x, y, z) > 0.0)) continue;
                bool interior = occupied(x - 1, y, z) && occupied(x + 1, y, z) &&
                                occupied(x, y - 1, z) && occupied(x, y + 1, z) &&
                                occupied(x, y, z - 1) && occupied(x, y, z + 1);
                if (interior) shell.at(x, y, z) = 0.0;
            }
    for (int y = 0; y < vol.ny; ++y)
        for (int x = 0; x < vol.nx; ++x) {
            int z = 0;
            while (z < vol.nz && !(shell.at(x, y, z) > 0.0)) ++z;   // reach first run
            while (z < vol.nz && shell.at(x, y, z) > 0.0) ++z;      // skip the run
            for (; z < vol.nz; ++z) shell.at(x, y, z) = 0.0;        // occluded
        }
    return shell;
}

// Linear measurement operator of a PSF stack at fixed scene geometry.
class ImagingOperator {
public:
    ImagingOperator(const PsfStack& stack, int nx, int ny, const std::vector<double>& plane_depths)
        : nx_(nx), ny_(ny), nz_(static_cast<int>(plane_depths.size())),
          n_channels_(stack.n_channels()) {
        const Grid2D& sg = stack.sensor_grid;
        kw_ = sg.width;
        kh_ = sg.height;
        pw_ = next_fft_size(nx_ + kw_ - 1);
        ph_ = next_fft_size(ny_ + kh_ - 1);
        for (double z : plane_depths) {
            if (z < stack.z_min() - 0.51 * stack.z_spacing() - 1e-15 ||
                z > stack.z_max() + 0.51 * stack.z_spacing() + 1e-15)
                throw config_error("ImagingOperator: scene plane depth outside stack z range");
            plane_map_.push_back(stack.nearest_plane(z));
        }
        // OTFs: kernel centered at the padded-grid origin so the inverse FFT of
        // OTF .* FFT(plane) is the 'same'-cropped linear convolution.
        otf_.assign(n_channels_, std::vector<std::vector<cd>>(nz_));
        for (int c = 0; c < n_channels_; ++c) {
            std::vector<std::vector<cd>> per_stack_plane(stack.n_planes());
            parallel_for(stack.n_planes(), [&](std::size_t k) {
                per_stack_plane[k] = make_otf(stack.plane(c, static_cast<int>(k)));
            });
            for (int j = 0; j < nz_; ++j) otf_[c][j] = per_stack_plane[plane_map_[j]];
        }
        pitch_ = sg.pitch;
        labels_ = stack.channels;
    }

    int n_channels() const { return n_channels_; }
    const std::vector<std::string>& labels() const { return labels_; }
    double pitch() const { return pitch_; }

    // I_c = sum_z h_c(z) * s(z)
    std::vector<RealImage> forward(const Volume3D& scene) const {
        check_scene(scene);
        // FFT each scene plane once, then multiply-accumulate per channel.
        std::vector<std::vector<cd>> shat(nz_);
        parallel_for(nz_, [&](std::size_t k) { shat[k] = pad_fft_plane(scene, static_cast<int>(k)); });
        std::vector<RealImage> out(n_channels_);
        parallel_for(n_channels_, [&](std::size_t c) {
            std::vector<cd> acc(static_cast<std::size_t>(ph_) * pw_, cd(0, 0));
            for (int k = 0; k < nz_; ++k) cmul_acc(acc, otf_[c][k], shat[k]);
            fft2(acc, ph_, pw_, true);
            RealImage img(Grid2D(nx_, ny_, pitch_));
            for (int y = 0; y < ny_; ++y)
                for (int x = 0; x < nx_; ++x)
                    img.at(y, x) = acc[static_cast<std::size_t>(y) * pw_ + x].real();
            out[c] = std::move(img);
        });
        return out;
    }

    // Adjoint (correlation): plane k of the result is sum_c h_c(z_k) (x) r_c.
    Volume3D adjoint(const std::vector<RealImage>& residuals, const Volume3D& like) const {
        if (static_cast<int>(residuals.size()) != n_channels_)
            throw config_error("ImagingOperator::adjoint: channel count mismatch");
        std::vector<std::vector<cd>> rhat(n_channels_);
        parallel_for(n_channels_, [&](std::size_t c) {
            const RealImage& r = residuals[c];
            if (r.grid.width != nx_ || r.grid.height != ny_)
                throw config_error("ImagingOperator::adjoint: residual shape mismatch");
            std::vector<cd> buf(static_cast<std::size_t>(ph_) * pw_, cd(0, 0));
            for (int y = 0; y < ny_; ++y)
                for (int x = 0; x < nx_; ++x)
                    buf[static_cast<std::size_t>(y) * pw_ + x] = r.at(y, x);
            fft2(buf, ph_, pw_, false);
            rhat[c] = std::move(buf);
        });
        Volume3D out(like.nx, like.ny, like.nz, like.pitch_x, like.pitch_y, like.pitch_z, like.z_origin);
        parallel_for(nz_, [&](std::size_t k) {
            std::vector<cd> acc(static_cast<std::size_t>(ph_) * pw_, cd(0, 0));
            for (int c = 0; c < n_channels_; ++c) cmul_conj_acc(acc, otf_[c][k], rhat[c]);
            fft2(acc, ph_, pw_, true);
            for (int y = 0; y < ny_; ++y)
                for (int x = 0; x < nx_; ++x)
                    out.at(x, y, static_cast<int>(k)) = acc[static_cast<std::size_t>(y) * pw_ + x].real();
        });
        return out;
    }

private:
    std::vector<cd> make_otf(const RealImage& kernel) const {
        std::vector<cd> buf(static_cast<std::size_t>(ph_) * pw_, cd(0, 0));
        int cy = kernel.grid.cy(), cx = kernel.grid.cx();
        for (int y = 0; y < kh_; ++y)
            for (int x = 0; x < kw_; ++x) {
                int py = ((y - cy) % ph_ + ph_) % ph_;
                int px = ((x - cx) % pw_ + pw_) % pw_;
                buf[static_cast<std::size_t>(py) * pw_ + px] = kernel.at(y, x);
            }
        fft2(buf, ph_, pw_, false);
        return buf;
    }

    std::vector<cd> pad_fft_plane(const Volume3D& scene, int k) const {
        std::vector<cd> buf(static_cast<std::size_t>(ph_) * pw_, cd(0, 0));
        for (int y = 0; y < ny_; ++y)
            for (int x = 0; x < nx_; ++x)
                buf[static_cast<std::size_t>(y) * pw_ + x] = scene.at(x, y, k);
        fft2(buf, ph_, pw_, false);
        return buf;
    }

    void check_scene(const Volume3D& scene) const {
        if (scene.nx != nx_ || scene.ny != ny_ || scene.nz != nz_)
            throw config_error("ImagingOperator: scene shape mismatch");
    }

    int nx_, ny_, nz_, n_channels_;
    int kw_ = 0, kh_ = 0, pw_ = 0, ph_ = 0;
    double pitch_ = 0;
    std::vector<int> plane_map_;
    std::vector<std::string> labels_;
    std::vector<std::vector<std::vector<cd>>> otf_;  // [channel][scene plane][freq]
};

// Expected (noiseless) measurement of a scene through a PSF stack.
inline Measurement image_scene(const Volume3D& scene, const PsfStack& stack, double exposure = 1.0) {
    if (std::abs(scene.pitch_x - scene.pitch_y) > 1e-12 * scene.pitch_x)
        throw config_error("image_scene: scene pixels must be square");
    if (std::abs(scene.pitch_x - stack.pitch()) > 1e-9 * stack.pitch())
        throw config_error("image_scene: scene pitch does not match stack sensor pitch");
    ImagingOperator op(stack, scene.nx, scene.ny, scene.plane_depths());
    Measurement m;
    m.labels = stack.channels;
    m.images = op.forward(scene);
    for (auto& img : m.images) img.scale(exposure);
    return m;
}

// Poisson shot noise followed by additive Gaussian read noise with
// sigma = read_sigma * (noiseless maximum across channels). Deterministic per
// seed; per-pixel streams make the result independent of scheduling.
inline Measurement add_noise(const Measurement& m, const NoiseConfig& cfg) {
    cfg.validate();
    Measurement out = m;
    double sigma = cfg.read_sigma * m.max();
    for (std::size_t c = 0; c < out.images.size(); ++c) {
        RealImage& img = out.images[c];
        const std::uint64_t channel_tag = 0x1000003ULL * (c + 1);
        parallel_for(img.v.size(), [&](std::size_t i) {
            RandomStream rs(cfg.seed, channel_tag + (i << 8));
            double x = img.v[i];
            if (cfg.poisson) x = static_cast<double>(rs.poisson(std::max(0.0, x)));
            if (sigma > 0) x += sigma * rs.gaussian();
            img.v[i] = x;
        }, 4096);
    }
    out.noise.poisson = cfg.poisson;
    out.noise.read_sigma = cfg.read_sigma;
    return out;
}

inline Measurement clamp_nonnegative(Measurement m) {
    for (auto& img : m.images)
        for (double& x : img.v) x = std::max(0.0, x);
    return m;
}

// 2x2 polarization Bayer tiling [90 45; 135 0]. Missing 45/135 channels are
// synthesized as the unpolarized mean (I0 + I90) / 2.
inline RealImage mosaic_polarization(const Measurement& m) {
    const RealImage& i0 = m.channel("0");
    const RealImage& i90 = m.channel("90");
    const int h = i0.grid.height, w = i0.grid.width;
    if (h % 2 || w % 2) throw config_error("mosaic_polarization: image dimensions must be even");
    RealImage i45(i0.grid), i135(i0.grid);
    if (m.find("45") >= 0)
        i45 = m.channel("45");
    else
        for (std::size_t i = 0; i < i45.v.size(); ++i) i45.v[i] = 0.5 * (i0.v[i] + i90.v[i]);
    if (m.find("135") >= 0)
        i135 = m.channel("135");
    else
        for (std::size_t i = 0; i < i135.v.size(); ++i) i135.v[i] = 0.5 * (i0.v[i] + i90.v[i]);

    RealImage out(i0.grid);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const RealImage* src;
            if (y % 2 == 0)
                src = (x % 2 == 0) ? &i90 : &i45;
            else
                src = (x % 2 == 0) ? &i135 : &i0;
            out.at(y, x) = src->at(y, x);
        }
    return out;
}

// Recover the four per-channel images at half resolution by subsampling the
// Bayer cells.
inline Measurement demosaic(const RealImage& mosaic) {
    const int h = mosaic.grid.height, w = mosaic.grid.width;
    if (h % 2 || w % 2) throw config_error("demosaic: image dimensions must be even");
    Grid2D half(w / 2, h / 2, mosaic.grid.pitch * 2);
    Measurement m;
    m.labels = {"90", "45", "135", "0"};
    m.images.assign(4, RealImage(half));
    for (int y = 0; y < h / 2; ++y)
        for (int x = 0; x < w / 2; ++x) {
            m.images[0].at(y, x) = mosaic.at(2 * y, 2 * x);
            m.images[1].at(y, x) = mosaic.at(2 * y, 2 * x + 1);
            m.images[2].at(y, x) = mosaic.at(2 * y + 1, 2 * x);
            m.images[3].at(y, x) = mosaic.at(2 * y + 1, 2 * x + 1);
        }
    return m;
}

// DHPSF-equivalent image: average of the four Bayer cells, half resolution.
inline RealImage bayer_average(const RealImage& mosaic) {
    Measurement m = demosaic(mosaic);
    RealImage out(m.images[0].grid);
    for (std::size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = 0.25 * (m.images[0].v[i] + m.images[1].v[i] + m.images[2].v[i] + m.images[3].v[i]);
    return out;
}

}  // namespace ps2f
