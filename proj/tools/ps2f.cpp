// Command-line front end: mask design, PSF-stack rendering, CRLB maps, scene
// simulation, reconstruction, depth scoring, and the full pipeline. Every
// subcommand takes a JSON config plus input/output paths, writes a run
// manifest next to its outputs, and honors --seed wherever randomness exists.
//
// Exit codes: 0 ok, 2 config error, 3 I/O error, 4 numerical failure.

#include <CLI11.hpp>

#include <ps2f/pipeline.hpp>

#include <cstdio>
#include <filesystem>

using namespace ps2f;
namespace fs = std::filesystem;

namespace {

void write_manifest(const PipelineConfig& cfg, std::uint64_t seed, double wall,
                    const std::vector<std::string>& outputs, const std::string& out_path) {
    write_text(out_path, manifest_json(cfg, seed, wall, outputs));
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

PsfStack stack_for(const PipelineConfig& cfg, const MaskBundle& mb, bool split,
                   const std::vector<double>& z) {
    if (split) {
        PolarizedMaskAssembly assembly = partition_mask(mb.mask, mb.partition_axis);
        return render_psf_stack(assembly, cfg.system, z, sensor_grid_for(cfg), cfg.pad_factor);
    }
    return render_psf_stack(mb.mask, cfg.system, z, sensor_grid_for(cfg), cfg.pad_factor);
}

int run_design_mask(const std::string& config_path, const std::string& out) {
    Timer timer;
    PipelineConfig cfg = load_pipeline_config(config_path);
    MaskBundle mb = build_mask(cfg);
    save_phase_mask(mb.mask, out);
    std::printf("mask: %dx%d, partition axis %.2f deg, modal fraction %.4f (%d iterations)\n",
                mb.mask.grid.width, mb.mask.grid.height, rad2deg(mb.partition_axis),
                mb.diagnostics.final_fraction(), mb.diagnostics.iterations_run);
    write_manifest(cfg, 0, timer.seconds(), {out}, out + ".manifest.json");
    return 0;
}

int run_render_psf(const std::string& config_path, const std::string& mask_path,
                   const std::string& out, bool full, const std::string& gallery) {
    Timer timer;
    PipelineConfig cfg = load_pipeline_config(config_path);
    MaskBundle mb;
    if (!mask_path.empty()) {
        mb.mask = load_phase_mask(mask_path);
        mb.partition_axis = auto_partition_axis(mb.mask, cfg.system);
    } else {
        mb = build_mask(cfg);
    }
    std::vector<double> z = plane_centers(cfg.z_min, cfg.z_max, cfg.z_planes);
    PsfStack stack = stack_for(cfg, mb, !full, z);
    save_psf_stack(stack, out);
    if (!gallery.empty()) {
        std::vector<RealImage> tiles;
        int step = std::max(1, stack.n_planes() / 8);
        for (int k = 0; k < stack.n_planes(); k += step) tiles.push_back(stack.plane(0, k));
        save_png_gallery(tiles, gallery);
    }
    std::printf("stack: %d channel(s) x %d plane(s) at %.3f um pitch\n", stack.n_channels(),
                stack.n_planes(), stack.pitch() * 1e6);
    write_manifest(cfg, 0, timer.seconds(), {out}, out + ".manifest.json");
    return 0;
}

int run_crlb_map(const std::string& config_path, const std::string& stack_path,
                 const std::string& out, int z_cells, int phi_cells, int patch,
                 double photons, double background, bool pair, const std::string& heatmap) {
    Timer timer;
    PipelineConfig cfg = load_pipeline_config(config_path);
    PsfStack stack;
    if (!stack_path.empty()) {
        stack = load_psf_stack(stack_path);
    } else {
        MaskBundle mb = build_mask(cfg);
        stack = stack_for(cfg, mb, pair, plane_centers(cfg.z_min, cfg.z_max, cfg.z_planes));
    }
    PhotonModel model{photons, background};
    std::vector<LineChannel> channels = pair ? line_channels_pair(stack, model)
                                             : line_channels_single(stack, model);
    // cell-centered grids with margin for the z finite differences
    double margin = 2.5 * stack.z_spacing();
    double z0 = stack.z_min() + margin, z1 = stack.z_max() - margin;
    std::vector<double> zg = plane_centers(z0, z1, z_cells);
    std::vector<double> pg = plane_centers(0.0, kPi, phi_cells);
    CrlbMap map = crlb_map(channels, zg, pg, model, patch, {}, pair ? "pair" : "single");
    save_crlb_map(map, out);
    auto st = map.stats_z();
    std::printf("sqrt CRLB_z: mean %.4g m, std %.4g m, %d finite cells, %d phi peaks\n", st.mean,
                st.stddev, st.finite_cells, st.peak_count);
    auto sp = map.stats_phi();
    std::printf("sqrt CRLB_phi: mean %.4g rad\n", sp.mean);
    if (!heatmap.empty()) {
        // log-scale false-color surface over (z, phi)
        double lo = 1e300, hi = 0;
        for (double v : map.sqrt_crlb_z)
            if (std::isfinite(v)) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        save_png_falsecolor(map.sqrt_crlb_z, static_cast<int>(map.phi_grid.size()),
                            static_cast<int>(map.z_grid.size()), lo, hi, heatmap, true);
    }
    write_manifest(cfg, 0, timer.seconds(), {out}, out + ".manifest.json");
    return 0;
}

int run_simulate(const std::string& config_path, const std::string& out, std::uint64_t seed,
                 const std::string& scene_out, const std::string& stack_out) {
    Timer timer;
    PipelineConfig cfg = load_pipeline_config(config_path);
    if (seed) cfg.noise.seed = seed;
    MaskBundle mb = build_mask(cfg);
    Volume3D scene = surface_extract(build_scene(cfg));
    PsfStack stack = stack_for(cfg, mb, true, scene.plane_depths());
    Measurement clean = image_scene(scene, stack, cfg.exposure);
    Measurement noisy = add_noise(clean, cfg.noise);
    save_measurement(noisy, out, stack.pitch());
    if (!scene_out.empty()) save_volume(scene, scene_out);
    if (!stack_out.empty()) save_psf_stack(stack, stack_out);
    std::printf("measurement: %zu channel(s), max %.1f expected photons\n", noisy.images.size(),
                clean.max());
    write_manifest(cfg, cfg.noise.seed, timer.seconds(), {out}, out + ".manifest.json");
    return 0;
}

int run_reconstruct(const std::string& config_path, const std::string& meas_path,
                    const std::string& stack_path, const std::string& out) {
    Timer timer;
    PipelineConfig cfg = load_pipeline_config(config_path);
    Measurement meas = load_measurement(meas_path);
    PsfStack stack = load_psf_stack(stack_path);
    double scale = meas.max();
    if (scale > 0)
        for (auto& img : meas.images) img.scale(1.0 / scale);
    Volume3D shape(meas.images[0].grid.width, meas.images[0].grid.height, stack.n_planes(),
                   stack.pitch(), stack.pitch(),
                   stack.n_planes() > 1 ? stack.z_samples[1] - stack.z_samples[0] : 1e-4,
                   stack.z_samples.front());
    ReconResult res = solve(meas, stack, shape, cfg.recon, nullptr, [](int it, double loss) {
        if (it % 100 == 0) std::printf("iteration %6d  loss %.6e\n", it, loss);
    });
    save_recon_result(res, out, cfg.doc.dump());
    std::printf("reconstruction %s after %zu iterations, final loss %.6e\n",
                res.converged ? "converged" : "finished", res.loss_trace.size(),
                res.loss_trace.back());
    write_manifest(cfg, cfg.recon.seed, timer.seconds(), {out}, out + ".manifest.json");
    return 0;
}

int run_evaluate(const std::string& config_path, const std::string& recon_path,
                 const std::string& truth_path, const std::string& out,
                 const std::string& depth_png) {
    Timer timer;
    PipelineConfig cfg = load_pipeline_config(config_path);
    ReconResult res = load_recon_result(recon_path);
    Volume3D truth = load_volume(truth_path);
    DepthMap pred = mip_depth(res.volume, cfg.mip_threshold);
    DepthMap gt = mip_depth(truth, cfg.mip_threshold);
    ScoreReport r = score(pred, gt);
    char buf[512];
    std::snprintf(buf, sizeof(buf), "mae_m=%.9g\nrmse_m=%.9g\nms_ssim=%.6f\ncoverage=%.6f\n",
                  r.mae, r.rmse, r.ms_ssim, r.coverage);
    write_text(out, buf);
    std::fputs(buf, stdout);
    if (!depth_png.empty()) {
        std::vector<double> vis = pred.depth;
        for (std::size_t i = 0; i < vis.size(); ++i)
            if (!pred.valid[i]) vis[i] = std::numeric_limits<double>::quiet_NaN();
        save_png_falsecolor(vis, pred.width, pred.height, cfg.z_min, cfg.z_max, depth_png);
    }
    write_manifest(cfg, 0, timer.seconds(), {out}, out + ".manifest.json");
    return 0;
}

int run_import(const std::string& in, const std::string& out, std::vector<int> dims,
               std::vector<std::string> extent) {
    if (dims.size() != 3) throw config_error("--dims requires three values");
    if (extent.size() != 3) throw config_error("--extent requires three lengths");
    Volume3D vol = import_vascusynth(in, {dims[0], dims[1], dims[2]},
                                     {parse_length(extent[0]), parse_length(extent[1]),
                                      parse_length(extent[2])});
    save_volume(vol, out);
    std::printf("imported %dx%dx%d, voxel pitch %.3f x %.3f x %.3f um\n", vol.nx, vol.ny, vol.nz,
                vol.pitch_x * 1e6, vol.pitch_y * 1e6, vol.pitch_z * 1e6);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"polarization-split rotating-PSF depth imaging toolkit"};
    app.require_subcommand(1);

    std::string config_path, out, mask_path, stack_path, meas_path, recon_path, truth_path;
    std::string gallery, heatmap, depth_png, scene_out, stack_out, in_path, outdir;
    std::uint64_t seed = 0;
    bool full = false, pair = false;
    int z_cells = 16, phi_cells = 16, patch = 64;
    double photons = 1e5, background = 5;
    std::vector<int> dims = {256, 256, 256};
    std::vector<std::string> extent = {"1.76mm", "1.76mm", "5.00mm"};

    auto* design = app.add_subcommand("design-mask", "design the rotating-PSF phase mask");
    design->add_option("--config", config_path)->required();
    design->add_option("--out", out)->required();

    auto* render = app.add_subcommand("render-psf", "render a PSF stack");
    render->add_option("--config", config_path)->required();
    render->add_option("--mask", mask_path, "load a mask container instead of designing");
    render->add_option("--out", out)->required();
    render->add_flag("--full", full, "render the unsplit full-mask stack");
    render->add_option("--gallery", gallery, "write a PNG strip of sample planes");

    auto* crlb = app.add_subcommand("crlb-map", "sqrt-CRLB surface over depth and orientation");
    crlb->add_option("--config", config_path)->required();
    crlb->add_option("--stack", stack_path, "use a rendered stack container");
    crlb->add_option("--out", out)->required();
    crlb->add_option("--z-cells", z_cells);
    crlb->add_option("--phi-cells", phi_cells);
    crlb->add_option("--patch", patch);
    crlb->add_option("--photons", photons);
    crlb->add_option("--background", background);
    crlb->add_flag("--pair", pair, "treat the stack channels as a lobe pair at N/4 each");
    crlb->add_option("--heatmap", heatmap, "write a log-scale false-color PNG");

    auto* simulate = app.add_subcommand("simulate", "render a noisy snapshot of a scene");
    simulate->add_option("--config", config_path)->required();
    simulate->add_option("--out", out)->required();
    simulate->add_option("--seed", seed);
    simulate->add_option("--scene-out", scene_out, "also write the surface-extracted scene");
    simulate->add_option("--stack-out", stack_out, "also write the rendered stack");

    auto* recon = app.add_subcommand("reconstruct", "regularized 3D reconstruction");
    recon->add_option("--config", config_path)->required();
    recon->add_option("--measurement", meas_path)->required();
    recon->add_option("--stack", stack_path)->required();
    recon->add_option("--out", out)->required();

    auto* evaluate = app.add_subcommand("evaluate", "depth map extraction and scoring");
    evaluate->add_option("--config", config_path)->required();
    evaluate->add_option("--recon", recon_path)->required();
    evaluate->add_option("--truth", truth_path)->required();
    evaluate->add_option("--out", out)->required();
    evaluate->add_option("--depth-png", depth_png);

    auto* pipeline = app.add_subcommand("pipeline", "full chain: mask, stack, scene, solve, score");
    pipeline->add_option("--config", config_path)->required();
    pipeline->add_option("--outdir", outdir)->required();
    pipeline->add_option("--seed", seed);

    auto* import = app.add_subcommand("import-vascusynth", "import a voxel grid file");
    import->add_option("--in", in_path)->required();
    import->add_option("--out", out)->required();
    import->add_option("--dims", dims)->expected(3);
    import->add_option("--extent", extent)->expected(3);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (design->parsed()) return run_design_mask(config_path, out);
        if (render->parsed()) return run_render_psf(config_path, mask_path, out, full, gallery);
        if (crlb->parsed())
            return run_crlb_map(config_path, stack_path, out, z_cells, phi_cells, patch, photons,
                                background, pair, heatmap);
        if (simulate->parsed()) return run_simulate(config_path, out, seed, scene_out, stack_out);
        if (recon->parsed()) return run_reconstruct(config_path, meas_path, stack_path, out);
        if (evaluate->parsed())
            return run_evaluate(config_path, recon_path, truth_path, out, depth_png);
        if (pipeline->parsed()) {
            PipelineConfig cfg = load_pipeline_config(config_path);
            PipelineResult res = run_pipeline(cfg, outdir, seed, [](int it, double loss) {
                if (it % 100 == 0) std::printf("iteration %6d  loss %.6e\n", it, loss);
            });
            std::printf("mae %.6g mm  rmse %.6g mm  ms-ssim %.4f  coverage %.4f\n",
                        res.report.mae * 1e3, res.report.rmse * 1e3, res.report.ms_ssim,
                        res.report.coverage);
            return 0;
        }
        if (import->parsed()) return run_import(in_path, out, dims, extent);
    } catch (const config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const parse_error& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return 3;
    } catch (const io_error& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return 3;
    } catch (const numerical_error& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    }
    return 0;
}
