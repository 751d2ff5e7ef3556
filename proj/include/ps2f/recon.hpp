#pragma once
// Regularized least-squares 3D reconstruction by Adam:
//
//   argmin_x || meas - A x ||_2^2 + lambda_TV ||Psi(x)||_1 + lambda_L1 ||x||_1
//
// with A the stacked per-channel depth-summed convolution operator and Psi the
// anisotropic 3D forward-difference gradient (reflective boundary). The data
// gradient uses the correlation adjoint; the non-smooth terms use subgradients
// with sign(0) = 0. Optional per-pixel per-channel multiplicative weights on
// the predicted channel images absorb spatially varying channel gains; they
// are estimated jointly with the scene when enabled.

#include <functional>

#include "ps2f/forward.hpp"

namespace ps2f {

struct ReconConfig {
    double lambda_tv = 0.0;
    double lambda_l1 = 0.0;
    int iterations = 2000;
    double step_size = 0.05;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    bool nonneg = true;
    bool estimate_weights = false;
    double weights_lr_factor = 0.1;  // weights learn at this fraction of the scene rate
    std::uint64_t seed = 0;

    void validate() const {
        if (lambda_tv < 0 || lambda_l1 < 0) throw config_error("ReconConfig: lambdas must be >= 0");
        if (iterations < 1) throw config_error("ReconConfig: iterations must be >= 1");
        if (adam_beta1 < 0 || adam_beta1 >= 1 || adam_beta2 < 0 || adam_beta2 >= 1)
            throw config_error("ReconConfig: betas must lie in [0, 1)");
        if (!(step_size > 0)) throw config_error("ReconConfig: step_size must be > 0");
    }
};

// Named presets for the regularizer weights (lambda_l1, lambda_tv).
inline ReconConfig recon_preset(const std::string& name) {
    ReconConfig cfg;
    if (name == "usaf") {
        cfg.lambda_l1 = 0.02;
        cfg.lambda_tv = 0.005;
    } else if (name == "beads") {
        cfg.lambda_l1 = 0.05;
        cfg.lambda_tv = 0.00;
    } else if (name == "strands") {
        cfg.lambda_l1 = 0.002;
        cfg.lambda_tv = 0.002;
    } else {
        throw config_error("recon_preset: unknown preset '" + name + "'");
    }
    return cfg;
}

struct ReconResult {
    Volume3D volume;
    std::vector<RealImage> weights;  // per channel, empty unless estimated
    std::vector<double> loss_trace;
    bool converged = false;
};

namespace detail {

// TV penalty value: L1 norm of forward differences along x, y, z
// (reflective boundary: the last difference along each axis is zero).
inline double tv_value(const Volume3D& x) {
    double acc = 0;
    for (int z = 0; z < x.nz; ++z)
        for (int y = 0; y < x.ny; ++y)
            for (int xx = 0; xx < x.nx; ++xx) {
                double v = x.at(xx, y, z);
                if (xx + 1 < x.nx) acc += std::abs(x.at(xx + 1, y, z) - v);
                if (y + 1 < x.ny) acc += std::abs(x.at(xx, y + 1, z) - v);
                if (z + 1 < x.nz) acc += std::abs(x.at(xx, y, z + 1) - v);
            }
    return acc;
}

inline double sgn(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

// Subgradient of the TV penalty, accumulated into g with weight lambda.
inline void tv_subgradient(const Volume3D& x, double lambda, Volume3D& g) {
    if (lambda == 0) return;
    for (int z = 0; z < x.nz; ++z)
        for (int y = 0; y < x.ny; ++y)
            for (int xx = 0; xx < x.nx; ++xx) {
                double v = x.at(xx, y, z);
                if (xx + 1 < x.nx) {
                    double s = sgn(x.at(xx + 1, y, z) - v);
                    g.at(xx, y, z) -= lambda * s;
                    g.at(xx + 1, y, z) += lambda * s;
                }
                if (y + 1 < x.ny) {
                    double s = sgn(x.at(xx, y + 1, z) - v);
                    g.at(xx, y, z) -= lambda * s;
                    g.at(xx, y + 1, z) += lambda * s;
                }
                if (z + 1 < x.nz) {
                    double s = sgn(x.at(xx, y, z + 1) - v);
                    g.at(xx, y, z) -= lambda * s;
                    g.at(xx, y, z + 1) += lambda * s;
                }
            }
}

inline std::vector<RealImage> predict(const ImagingOperator& op, const Volume3D& x,
                                      const std::vector<RealImage>* weights) {
    std::vector<RealImage> pred = op.forward(x);
    if (weights)
        for (std::size_t c = 0; c < pred.size(); ++c)
            for (std::size_t i = 0; i < pred[c].v.size(); ++i) pred[c].v[i] *= (*weights)[c].v[i];
    return pred;
}

}  // namespace detail

// Objective value at x (optionally with fixed channel weights).
inline double objective(const Volume3D& x, const Measurement& meas, const PsfStack& stack,
                        const ReconConfig& cfg, const std::vector<RealImage>* weights = nullptr) {
    cfg.validate();
    ImagingOperator op(stack, x.nx, x.ny, x.plane_depths());
    std::vector<RealImage> pred = detail::predict(op, x, weights);
    if (pred.size() != meas.images.size())
        throw config_error("objective: measurement channel count mismatch");
    double data = 0;
    for (std::size_t c = 0; c < pred.size(); ++c) {
        if (!(pred[c].grid == meas.images[c].grid))
            throw config_error("objective: measurement shape mismatch");
        for (std::size_t i = 0; i < pred[c].v.size(); ++i)
            data += sq(pred[c].v[i] - meas.images[c].v[i]);
    }
    double reg = cfg.lambda_tv * detail::tv_value(x);
    double l1 = 0;
    if (cfg.lambda_l1 > 0)
        for (double v : x.v) l1 += std::abs(v);
    return data + reg + cfg.lambda_l1 * l1;
}

// Full (sub)gradient of the objective with respect to x.
inline Volume3D gradient(const Volume3D& x, const Measurement& meas, const PsfStack& stack,
                         const ReconConfig& cfg, const std::vector<RealImage>* weights = nullptr) {
    cfg.validate();
    ImagingOperator op(stack, x.nx, x.ny, x.plane_depths());
    std::vector<RealImage> pred = detail::predict(op, x, weights);
    if (pred.size() != meas.images.size())
        throw config_error("gradient: measurement channel count mismatch");
    std::vector<RealImage> resid(pred.size());
    for (std::size_t c = 0; c < pred.size(); ++c) {
        resid[c] = pred[c];
        for (std::size_t i = 0; i < resid[c].v.size(); ++i) {
            resid[c].v[i] -= meas.images[c].v[i];
            if (weights) resid[c].v[i] *= (*weights)[c].v[i];
        }
    }
    Volume3D g = op.adjoint(resid, x);
    for (double& v : g.v) v *= 2.0;
    detail::tv_subgradient(x, cfg.lambda_tv, g);
    if (cfg.lambda_l1 > 0)
        for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += cfg.lambda_l1 * detail::sgn(x.v[i]);
    return g;
}

using IterCallback = std::function<void(int iteration, double loss)>;

// Adam on the reconstruction objective, with optional joint estimation of
// per-pixel per-channel weights (initialized to one, kept positive).
// Deterministic for a fixed config; `init` defaults to the zero volume.
inline ReconResult solve(const Measurement& meas, const PsfStack& stack, const Volume3D& shape,
                         const ReconConfig& cfg, const Volume3D* init = nullptr,
                         const IterCallback& callback = nullptr) {
    cfg.validate();
    if (meas.images.size() != stack.channels.size())
        throw config_error("solve: measurement channels do not match stack channels");
    ImagingOperator op(stack, shape.nx, shape.ny, shape.plane_depths());

    Volume3D x = init ? *init : Volume3D(shape.nx, shape.ny, shape.nz, shape.pitch_x, shape.pitch_y,
                                         shape.pitch_z, shape.z_origin);
    if (init && !x.same_shape(shape)) throw config_error("solve: init volume shape mismatch");
    if (cfg.nonneg)
        for (double& v : x.v) v = std::max(0.0, v);

    const bool with_w = cfg.estimate_weights;
    std::vector<RealImage> w;
    if (with_w) w.assign(meas.images.size(), RealImage(meas.images[0].grid, 1.0));

    std::vector<double> m(x.v.size(), 0.0), vv(x.v.size(), 0.0);
    std::vector<std::vector<double>> wm, wv;
    if (with_w) {
        wm.assign(w.size(), std::vector<double>(w[0].v.size(), 0.0));
        wv.assign(w.size(), std::vector<double>(w[0].v.size(), 0.0));
    }

    ReconResult res;
    res.loss_trace.reserve(cfg.iterations);
    double b1t = 1.0, b2t = 1.0;
    for (int it = 0; it < cfg.iterations; ++it) {
        std::vector<RealImage> pred = detail::predict(op, x, with_w ? &w : nullptr);
        double data = 0;
        std::vector<RealImage> resid(pred.size());
        for (std::size_t c = 0; c < pred.size(); ++c) {
            resid[c] = pred[c];
            for (std::size_t i = 0; i < resid[c].v.size(); ++i) {
                resid[c].v[i] -= meas.images[c].v[i];
                data += sq(resid[c].v[i]);
            }
        }
        double loss = data + cfg.lambda_tv * detail::tv_value(x);
        if (cfg.lambda_l1 > 0) {
            double l1 = 0;
            for (double v : x.v) l1 += std::abs(v);
            loss += cfg.lambda_l1 * l1;
        }
        res.loss_trace.push_back(loss);
        if (!std::isfinite(loss))
            throw numerical_error("solve: objective diverged at iteration " + std::to_string(it),
                                  res.loss_trace);
        if (callback) callback(it, loss);

        // dL/dx = 2 A^T (w .* r) (+ regularizers); dL/dw_c = 2 (A x)_c .* r_c
        std::vector<RealImage> back = resid;
        if (with_w)
            for (std::size_t c = 0; c < back.size(); ++c)
                for (std::size_t i = 0; i < back[c].v.size(); ++i) back[c].v[i] *= w[c].v[i];
        Volume3D g = op.adjoint(back, x);
        for (double& v : g.v) v *= 2.0;
        detail::tv_subgradient(x, cfg.lambda_tv, g);
        if (cfg.lambda_l1 > 0)
            for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += cfg.lambda_l1 * detail::sgn(x.v[i]);

        b1t *= cfg.adam_beta1;
        b2t *= cfg.adam_beta2;
        double corr = std::sqrt(1.0 - b2t) / (1.0 - b1t);
        for (std::size_t i = 0; i < x.v.size(); ++i) {
            m[i] = cfg.adam_beta1 * m[i] + (1 - cfg.adam_beta1) * g.v[i];
            vv[i] = cfg.adam_beta2 * vv[i] + (1 - cfg.adam_beta2) * g.v[i] * g.v[i];
            x.v[i] -= cfg.step_size * corr * m[i] / (std::sqrt(vv[i]) + cfg.adam_eps);
            if (cfg.nonneg && x.v[i] < 0) x.v[i] = 0;
        }

        if (with_w) {
            // weight gradient at the same point as the residual; the raw
            // channel prediction (A x) is pred / w since w > 0
            double wl = cfg.step_size * cfg.weights_lr_factor;
            for (std::size_t c = 0; c < w.size(); ++c)
                for (std::size_t i = 0; i < w[c].v.size(); ++i) {
                    double raw = pred[c].v[i] / w[c].v[i];
                    double gw = 2.0 * raw * resid[c].v[i];
                    wm[c][i] = cfg.adam_beta1 * wm[c][i] + (1 - cfg.adam_beta1) * gw;
                    wv[c][i] = cfg.adam_beta2 * wv[c][i] + (1 - cfg.adam_beta2) * gw * gw;
                    w[c].v[i] -= wl * corr * wm[c][i] / (std::sqrt(wv[c][i]) + cfg.adam_eps);
                    if (w[c].v[i] < 1e-6) w[c].v[i] = 1e-6;
                }
        }
    }
    // converged: smoothed loss stopped decreasing materially over the last decile
    if (res.loss_trace.size() >= 20) {
        std::size_t tail = res.loss_trace.size() / 10;
        double a = res.loss_trace[res.loss_trace.size() - tail - 1];
        double b = res.loss_trace.back();
        res.converged = (a - b) <= 1e-3 * std::abs(a);
    }
    res.volume = std::move(x);
    if (with_w) res.weights = std::move(w);
    return res;
}

inline ReconResult solve_with_weights(const Measurement& meas, const PsfStack& stack,
                                      const Volume3D& shape, ReconConfig cfg,
                                      const Volume3D* init = nullptr,
                                      const IterCallback& callback = nullptr) {
    if (!cfg.estimate_weights) throw config_error("solve_with_weights: estimate_weights disabled");
    return solve(meas, stack, shape, cfg, init, callback);
}

}  // namespace ps2f
