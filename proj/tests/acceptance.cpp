// End-to-end acceptance suite. Each numbered criterion prints one PASS/FAIL
// line; the exit code is the number of failures. Tolerances are fixed here,
// not tuned at runtime.

#include <ps2f/pipeline.hpp>

#include <cstdarg>
#include <cstdio>
#include <filesystem>

#include "support.hpp"

using namespace ps2f;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, const char* part, bool ok, const std::string& detail) {
    std::printf("[%s] criterion %d%s: %s\n", ok ? "PASS" : "FAIL", criterion, part, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

System4f reference_system() { return {50e-3, 50e-3, 3e-3, 532e-9}; }

GLBeamSpec reference_beam() {
    GLBeamSpec spec;
    spec.modes = {{1, 1}, {5, 3}, {9, 5}, {13, 7}};
    spec.waist = 0.4e-3;
    spec.slope = 2;
    spec.intercept = -1;
    return spec;
}

struct Shared {
    MaskDesign design;
    double phi0 = 0;
    PolarizedMaskAssembly assembly;
};

Shared make_shared_mask() {
    Shared s;
    Grid2D pupil(512, 512, 2 * 3e-3 / 512);
    s.design = design_dhpsf_mask(reference_beam(), reference_system(), pupil, GSConfig{});
    s.phi0 = lobe_axis_angle(render_field(pupil_field(s.design.mask), reference_system(), 0.0).intensity());
    s.assembly = partition_mask(s.design.mask, auto_partition_axis(s.design.mask, reference_system()));
    return s;
}

double data_residual(const ReconResult& res, const Measurement& meas, const PsfStack& stack) {
    ImagingOperator op(stack, res.volume.nx, res.volume.ny, res.volume.plane_depths());
    auto pred = op.forward(res.volume);
    double acc = 0;
    for (std::size_t c = 0; c < pred.size(); ++c)
        for (std::size_t i = 0; i < pred[c].v.size(); ++i)
            acc += sq(pred[c].v[i] - meas.images[c].v[i]);
    return acc;
}

Volume3D scale_init_to(const Volume3D& base, const Measurement& meas, const PsfStack& stack) {
    ImagingOperator op(stack, base.nx, base.ny, base.plane_depths());
    auto pred = op.forward(base);
    double num = 0, den = 0;
    for (std::size_t c = 0; c < pred.size(); ++c)
        for (std::size_t i = 0; i < pred[c].v.size(); ++i) {
            num += pred[c].v[i] * meas.images[c].v[i];
            den += sq(pred[c].v[i]);
        }
    Volume3D out = base;
    for (double& v : out.v) v *= num / den;
    return out;
}

double depth_slope(const Volume3D& vol, double phi, double thr) {
    DepthMap dm = mip_depth(vol, thr);
    double cx = vol.nx / 2.0, cy = vol.ny / 2.0;
    double sw = 0, st = 0, sz = 0, stt = 0, stz = 0;
    for (int y = 0; y < vol.ny; ++y)
        for (int x = 0; x < vol.nx; ++x) {
            if (!dm.is_valid(y, x)) continue;
            double t = (x - cx) * std::cos(phi) + (y - cy) * std::sin(phi);
            sw += 1;
            st += t;
            sz += dm.at(y, x);
            stt += t * t;
            stz += t * dm.at(y, x);
        }
    if (sw < 5) return 0;
    return (sw * stz - st * sz) / (sw * stt - st * st);
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// ---- criteria ----

void criterion_1(const Shared& s) {
    System4f sys = reference_system();
    double zr = equivalent_rayleigh(sys, 0.4e-3);
    report(1, "a", std::abs(zr - 2.646e-3) < 1e-6,
           fmt("equivalent rayleigh length %.6f mm (expected 2.646)", zr * 1e3));

    ComplexField pf = pupil_field(s.design.mask);
    std::vector<double> axes;
    for (int i = -16; i <= 16; ++i)
        axes.push_back(lobe_axis_angle(render_field(pf, sys, i / 16.0 * 2.646e-3).intensity()));
    auto un = unwrap_axis_series(axes);
    double span = rad2deg(std::abs(un.back() - un.front()));
    report(1, "b", span >= 160.0,
           fmt("measured lobe rotation %.1f deg across [-2.65, +2.65] mm (need >= 160)", span));
}

void criterion_2() {
    System4f sys = reference_system();
    double lateral = lateral_diffraction_limit(sys);
    double axial = axial_diffraction_scale(sys);
    report(2, "a", std::abs(lateral - 10.81e-6) <= 0.01e-6,
           fmt("lateral limit %.4f um (quoted 10.81, tolerance one unit in the last digit)",
               lateral * 1e6));
    report(2, "b", std::abs(axial - 591e-6) <= 1e-6,
           fmt("axial scale %.2f um (quoted 591, tolerance one unit in the last digit)", axial * 1e6));
}

void criterion_3(const Shared& s) {
    System4f sys = reference_system();
    Grid2D sensor(63, 63, 6.875e-6);
    std::vector<double> z = plane_centers(-2.646e-3, 2.646e-3, 33);
    PsfStack full = render_psf_stack(s.design.mask, sys, z, sensor);
    PsfStack pair = render_psf_stack(s.assembly, sys, z, sensor);
    PhotonModel model{1e5, 5};

    // (a) additivity of channel information is exact
    LinePatch patch{0.4e-3, 0.9, 64, 1.0};
    FisherMatrix fa = fisher_line({{&pair, 0, model.signal_photons / 4}}, patch, model.background);
    FisherMatrix fb = fisher_line({{&pair, 1, model.signal_photons / 4}}, patch, model.background);
    FisherMatrix fsum = fisher_line(line_channels_pair(pair, model), patch, model.background);
    double add_err = 0;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            add_err = std::max(add_err, std::abs(fsum.at(i, j) - fa.at(i, j) - fb.at(i, j)) /
                                            std::max(1.0, std::abs(fsum.at(i, j))));
    report(3, "a", add_err < 1e-12, fmt("channel-pair information additivity, rel err %.2e", add_err));

    // (b) comparable depth precision at a quarter of the photons, fewer ridges
    std::vector<double> zg = plane_centers(-2.2e-3, 2.2e-3, 16);
    std::vector<double> pg = plane_centers(0.0, kPi, 16);
    CrlbMap md = crlb_map(line_channels_single(full, model), zg, pg, model, 64, {}, "single");
    CrlbMap mp = crlb_map(line_channels_pair(pair, model), zg, pg, model, 64, {}, "pair");
    auto sd = md.stats_z(), sp = mp.stats_z();
    double ratio = sp.mean / sd.mean;
    report(3, "b", ratio >= 0.5 && ratio <= 2.0 && sp.peak_count < sd.peak_count,
           fmt("mean sqrt CRLB_z pair/single = %.3f (need within [0.5, 2]); phi ridge peaks %d vs %d "
               "(need strictly fewer)",
               ratio, sp.peak_count, sd.peak_count));

    // (c) orientation is far easier than depth
    double zr = equivalent_rayleigh(sys, 0.4e-3);
    bool ok_c = true;
    std::string detail_c;
    for (const CrlbMap* m : {&md, &mp}) {
        double implied = 0;
        int n = 0;
        for (std::size_t iz = 0; iz < m->z_grid.size(); ++iz) {
            double rate = reference_beam().slope / zr / (1 + sq(m->z_grid[iz] / zr));
            for (std::size_t ip = 0; ip < m->phi_grid.size(); ++ip) {
                double v = m->at_z(static_cast<int>(iz), static_cast<int>(ip));
                if (std::isfinite(v)) {
                    implied += rate * v;
                    ++n;
                }
            }
        }
        implied /= n;
        double phi_mean = m->stats_phi().mean;
        ok_c = ok_c && phi_mean < kPi / 30 && phi_mean < 0.5 * implied;
        detail_c += fmt("%s: mean sqrt CRLB_phi %.2e rad vs pi/30 = %.2e and 0.5x implied angle %.2e; ",
                        m->psf_label.c_str(), phi_mean, kPi / 30, 0.5 * implied);
    }
    report(3, "c", ok_c, detail_c);
}

void criterion_4(const Shared& s) {
    System4f sys = reference_system();
    const int NX = 128, NZ = 64;
    double pitch = 6.875e-6, zmin = -2.5e-3, zmax = 2.5e-3;
    double pitch_z = (zmax - zmin) / NZ;
    Grid2D sensor(63, 63, pitch);

    // skew line along the in-focus lobe axis, crossing the full field so no
    // endpoint is visible; depth span +-0.1 of the plane count
    Volume3D truth = make_skew_line(NX, NX, NZ, pitch, pitch_z, s.phi0, 0.10 * NZ, 1.0, 0.75);
    truth.z_origin = zmin + 0.5 * pitch_z;
    Volume3D mirror = make_skew_line(NX, NX, NZ, pitch, pitch_z, s.phi0, -0.10 * NZ, 1.0, 0.75);
    mirror.z_origin = truth.z_origin;

    std::vector<double> z = truth.plane_depths();
    PsfStack full = render_psf_stack(s.design.mask, sys, z, sensor);
    PsfStack pair = render_psf_stack(s.assembly, sys, z, sensor);

    const double exposure = 5e3;
    NoiseConfig nc;
    nc.poisson = true;
    nc.read_sigma = 0.10;

    ReconConfig rc;
    rc.iterations = 200;
    rc.step_size = 0.05;
    rc.lambda_l1 = 0.002;
    rc.lambda_tv = 0.0005;

    auto run_pair_of_inits = [&](const PsfStack& stack, Measurement meas) {
        double sscale = meas.max();
        for (auto& img : meas.images) img.scale(1.0 / sscale);
        Volume3D ip = scale_init_to(truth, meas, stack);
        Volume3D im = scale_init_to(mirror, meas, stack);
        ReconResult rp = solve(meas, stack, truth, rc, &ip);
        ReconResult rm = solve(meas, stack, truth, rc, &im);
        double resp = data_residual(rp, meas, stack);
        double resm = data_residual(rm, meas, stack);
        double sep = std::abs(resp - resm) / std::min(resp, resm);
        double win_slope = depth_slope((resp <= resm ? rp : rm).volume, s.phi0, 0.1);
        double slope_p = depth_slope(rp.volume, s.phi0, 0.1);
        double slope_m = depth_slope(rm.volume, s.phi0, 0.1);
        return std::tuple{sep, win_slope, slope_p, slope_m};
    };

    // two-lobe mask: the two reconstructions explain the data equally well and
    // carry opposite skew signs (the global ambiguity)
    nc.seed = 100;
    Measurement noisy = add_noise(image_scene(truth, full, exposure), nc);
    auto [sep_dh, win_dh, slope_p, slope_m] = run_pair_of_inits(full, noisy);
    (void)win_dh;
    bool distinct = (slope_p > 0) != (slope_m > 0);
    report(4, "a", sep_dh < 0.01 && distinct,
           fmt("two-lobe mask: residual separation %.3f%% (< 1%% wanted) with opposing recovered "
               "skews (%+.2e / %+.2e)",
               100 * sep_dh, slope_p, slope_m));

    // lobe pair: the winner is unique and its slope sign is right, every seed
    int correct = 0, separated = 0;
    for (int t = 0; t < 10; ++t) {
        nc.seed = 200 + t;
        Measurement pm = add_noise(image_scene(truth, pair, exposure), nc);
        auto [sep, win_slope, sp_, sm_] = run_pair_of_inits(pair, pm);
        (void)sp_;
        (void)sm_;
        if (win_slope > 0) ++correct;
        if (sep > 0.01) ++separated;
    }
    report(4, "b", correct == 10 && separated == 10,
           fmt("lobe pair at half photons: correct skew sign %d/10, residual separation > 1%% in "
               "%d/10",
               correct, separated));
}

void criterion_5(const Shared& s) {
    System4f sys = reference_system();
    const int N = 64;
    double pitch = 6.875e-6, zmin = -2.5e-3, zmax = 2.5e-3;
    double pitch_z = (zmax - zmin) / N;
    Grid2D sensor(63, 63, pitch);

    Volume3D proto(N, N, N, pitch, pitch, pitch_z, zmin + 0.5 * pitch_z);
    std::vector<double> z = proto.plane_depths();
    PsfStack full = render_psf_stack(s.design.mask, sys, z, sensor);
    PsfStack pair = render_psf_stack(s.assembly, sys, z, sensor);

    ReconConfig rc;
    rc.iterations = 400;
    rc.step_size = 0.05;
    rc.lambda_l1 = 0.002;
    rc.lambda_tv = 0.002;

    int wins = 0;
    std::string detail;
    for (int scene_seed = 1; scene_seed <= 5; ++scene_seed) {
        Volume3D scene = make_tree(N, N, N, pitch, pitch_z, scene_seed);
        scene.z_origin = proto.z_origin;
        scene = surface_extract(scene);
        DepthMap gt = mip_depth(scene, 0.02);
        double rmse[2];
        int idx = 0;
        for (const PsfStack* stack : {&pair, &full}) {
            NoiseConfig nc;
            nc.poisson = true;
            nc.read_sigma = 0.02;
            nc.seed = 1000 + scene_seed;
            Measurement noisy = add_noise(image_scene(scene, *stack, 2e4), nc);
            double sc = noisy.max();
            for (auto& img : noisy.images) img.scale(1.0 / sc);
            ReconResult res = solve(noisy, *stack, scene, rc);
            rmse[idx++] = score(mip_depth(res.volume, 0.02), gt).rmse;
        }
        if (rmse[0] < rmse[1]) ++wins;
        detail += fmt("s%d %.2f/%.2f ", scene_seed, rmse[0] * 1e3, rmse[1] * 1e3);
    }
    report(5, "", wins >= 4,
           fmt("lobe pair at half photons beats the two-lobe mask in %d/5 scenes (need >= 4); "
               "rmse mm pair/full: %s",
               wins, detail.c_str()));
}

void criterion_6() {
    Grid2D sensor(256, 256, 1e-5);
    Measurement m;
    m.labels = {"full"};
    m.images.assign(1, RealImage(sensor, 1000.0));
    bool ok = true;
    std::string detail;
    double want[3] = {34.0, 26.0, 20.0};
    double sigmas[3] = {0.02, 0.05, 0.10};
    for (int i = 0; i < 3; ++i) {
        NoiseConfig cfg;
        cfg.poisson = false;
        cfg.read_sigma = sigmas[i];
        cfg.seed = 42 + i;
        Measurement noisy = add_noise(m, cfg);
        double mse = 0;
        for (double v : noisy.images[0].v) mse += sq(v - 1000.0);
        mse /= noisy.images[0].v.size();
        double psnr = 10 * std::log10(sq(1000.0) / mse);
        ok = ok && std::abs(psnr - 20 * std::log10(1.0 / sigmas[i])) <= 0.3 &&
             std::abs(psnr - want[i]) <= 0.3;
        detail += fmt("sigma %.2f -> %.2f dB; ", sigmas[i], psnr);
    }
    report(6, "", ok, detail + "(expected 34/26/20 within 0.3)");
}

void criterion_7(const Shared& s) {
    using namespace testsupport;
    // analytic Gaussian localization oracle
    {
        Grid2D sensor(61, 61, 1e-5);
        double sigma0 = 2.5e-5, slope = 0.35, z_eval = 1e-4;
        PsfStack stack = gaussian_stack(9, 4e-4, sensor, sigma0, slope);
        double sigma = sigma0 * std::sqrt(1.0 + sq(slope * z_eval / sigma0));
        auto crlb = crlb_extract(fisher_point(stack, {0, 0, z_eval}, {1e5, 0}));
        double expect = sigma / std::sqrt(1e5);
        bool ok = std::isfinite(crlb[0]) && std::abs(crlb[0] - expect) / expect < 0.05;
        report(7, "a", ok, fmt("gaussian localization bound: %.4g vs analytic %.4g m", crlb[0], expect));
    }
    // gradient versus central finite differences
    {
        Grid2D sensor(9, 9, 1e-5);
        PsfStack stack = gaussian_stack(4, 1.5e-4, sensor, 1.4e-5, 0.4);
        Volume3D x(12, 12, 4, 1e-5, 1e-5, 1e-4, -1.5e-4);
        RandomStream rs(7, 5);
        for (double& v : x.v) v = rs.uniform();
        Measurement m;
        m.labels = {"full"};
        m.images.assign(1, RealImage(Grid2D(12, 12, 1e-5)));
        for (double& v : m.images[0].v) v = rs.uniform();
        ReconConfig cfg;
        Volume3D g = gradient(x, m, stack, cfg);
        double worst = 0;
        for (int t = 0; t < 100; ++t) {
            std::size_t i = rs.next_u64() % x.v.size();
            Volume3D xp = x, xm = x;
            xp.v[i] += 1e-6;
            xm.v[i] -= 1e-6;
            double fd = (objective(xp, m, stack, cfg) - objective(xm, m, stack, cfg)) / 2e-6;
            worst = std::max(worst, std::abs(g.v[i] - fd) / std::max(1e-12, std::abs(fd)));
        }
        report(7, "b", worst < 1e-4, fmt("gradient vs finite differences, worst rel err %.2e", worst));
    }
    // adjoint identity
    {
        Grid2D sensor(13, 13, 1e-5);
        PsfStack pair = lobe_pair_stack(6, 2.5e-4, sensor, 3e-5, 1.2e-5);
        Volume3D shape(20, 18, 6, 1e-5, 1e-5, 1e-4, -2.5e-4);
        ImagingOperator op(pair, shape.nx, shape.ny, shape.plane_depths());
        Volume3D x = shape;
        RandomStream rs(11, 3);
        for (double& v : x.v) v = rs.uniform() - 0.5;
        std::vector<RealImage> y(2, RealImage(Grid2D(shape.nx, shape.ny, 1e-5)));
        for (auto& img : y)
            for (double& v : img.v) v = rs.uniform() - 0.5;
        auto ax = op.forward(x);
        Volume3D aty = op.adjoint(y, shape);
        double lhs = 0, rhs = 0;
        for (int c = 0; c < 2; ++c)
            for (std::size_t i = 0; i < ax[c].v.size(); ++i) lhs += ax[c].v[i] * y[c].v[i];
        for (std::size_t i = 0; i < x.v.size(); ++i) rhs += x.v[i] * aty.v[i];
        double err = std::abs(lhs - rhs) / std::abs(rhs);
        report(7, "c", err < 1e-6, fmt("adjoint identity rel err %.2e", err));
    }
    // coherent half-aperture additivity
    {
        System4f sys = reference_system();
        ComplexField fa = render_field(s.assembly.half_field(0), sys, 0.8e-3);
        ComplexField fb = render_field(s.assembly.half_field(1), sys, 0.8e-3);
        ComplexField ff = render_field(pupil_field(s.design.mask), sys, 0.8e-3);
        double err = 0, ref = 0;
        for (std::size_t i = 0; i < ff.v.size(); ++i) {
            err += std::norm(fa.v[i] + fb.v[i] - ff.v[i]);
            ref += std::norm(ff.v[i]);
        }
        double rel = std::sqrt(err / ref);
        report(7, "d", rel < 1e-9, fmt("half-aperture coherent additivity rel err %.2e", rel));
    }
    // container round trip is byte-exact
    {
        fs::path dir = fs::temp_directory_path() / "ps2f_acceptance";
        fs::create_directories(dir);
        Volume3D vol = random_volume(9, 7, 5, 42, 0.8);
        std::string p1 = (dir / "v1.ps2f").string(), p2 = (dir / "v2.ps2f").string();
        save_volume(vol, p1);
        save_volume(load_volume(p1), p2);
        bool ok = slurp(p1) == slurp(p2);
        report(7, "e", ok, "container round-trip byte-identical");
        fs::remove_all(dir);
    }
    // fixed-seed pipeline reruns are byte-identical
    {
        nlohmann::json j = {
            {"optics",
             {{"wavelength", "532nm"}, {"f1", "50mm"}, {"f2", "50mm"}, {"aperture_diameter", "3mm"}}},
            {"beam",
             {{"waist", "0.4mm"}, {"modes", {{1, 1}, {5, 3}, {9, 5}, {13, 7}}}, {"slope", 2},
              {"intercept", -1}}},
            {"pupil", {{"samples", 256}}},
            {"stack",
             {{"z_min", "-2.5mm"}, {"z_max", "2.5mm"}, {"planes", 32}, {"sensor_pixels", 31},
              {"sensor_pitch", "6.875um"}}},
            {"scene", {{"source", "tree"}, {"dims", {48, 48, 32}}, {"seed", 5}, {"exposure", 10000.0}}},
            {"noise", {{"poisson", true}, {"read_sigma", 0.02}, {"seed", 11}}},
            {"recon", {{"preset", "strands"}, {"iterations", 60}}}};
        PipelineConfig cfg = parse_pipeline_config(j);
        fs::path dir = fs::temp_directory_path() / "ps2f_acceptance_pipe";
        fs::remove_all(dir);
        std::string a = (dir / "a").string(), b = (dir / "b").string();
        run_pipeline(cfg, a);
        run_pipeline(cfg, b);
        bool ok = true;
        for (const char* f : {"mask.ps2f", "psf_stack.ps2f", "measurement.ps2f", "recon.ps2f"})
            ok = ok && slurp(a + "/" + f) == slurp(b + "/" + f) && !slurp(a + "/" + f).empty();
        report(7, "f", ok, "fixed-seed pipeline rerun byte-identical");
        fs::remove_all(dir);
    }
}

void criterion_8(const Shared& s) {
    System4f sys = reference_system();
    Grid2D sensor(63, 63, 6.875e-6);
    std::vector<double> z = plane_centers(-2.646e-3, 2.646e-3, 33);
    PsfStack pair = render_psf_stack(s.assembly, sys, z, sensor);
    auto widths = lobe_width_report(pair);
    double mean = 0;
    int n = 0;
    for (double w : widths)
        if (std::isfinite(w)) {
            mean += w;
            ++n;
        }
    mean /= std::max(1, n);
    bool ok = n >= 2 && std::abs(mean - 12e-6) / 12e-6 <= 0.20;
    report(8, "", ok, fmt("fitted lobe 2-sigma width %.2f um (expected 12 um within 20%%)", mean * 1e6));
}

}  // namespace

int main() {
    auto t0 = std::chrono::steady_clock::now();
    Shared shared = make_shared_mask();

    criterion_1(shared);
    criterion_2();
    criterion_3(shared);
    criterion_4(shared);
    criterion_5(shared);
    criterion_6();
    criterion_7(shared);
    criterion_8(shared);

    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%d failure(s), %.1f s total\n", g_failures, wall);
    return g_failures;
}
