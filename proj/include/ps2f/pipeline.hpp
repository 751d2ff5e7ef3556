#pragma once
// End-to-end orchestration shared by the CLI subcommands: mask design or load,
// stack rendering at the scene's z resolution, scene synthesis/import with
// surface extraction, measurement simulation, reconstruction, depth scoring,
// figure emission, and run manifests.

#include <chrono>
#include <filesystem>

#include "ps2f/config.hpp"
#include "ps2f/evaluate.hpp"
#include "ps2f/io.hpp"
#include "ps2f/png.hpp"
#include "ps2f/recon.hpp"
#include "ps2f/scenes.hpp"

namespace ps2f {

inline Grid2D pupil_grid_for(const PipelineConfig& cfg) {
    double extent = cfg.pupil_extent_factor * cfg.system.aperture_diameter;
    return Grid2D(cfg.pupil_samples, cfg.pupil_samples, extent / cfg.pupil_samples);
}

inline Grid2D sensor_grid_for(const PipelineConfig& cfg) {
    return Grid2D(cfg.sensor_pixels, cfg.sensor_pixels, cfg.sensor_pitch);
}

// Evenly spaced plane centers covering [z_min, z_max].
inline std::vector<double> plane_centers(double z_min, double z_max, int n) {
    std::vector<double> z(n);
    double step = (z_max - z_min) / n;
    for (int k = 0; k < n; ++k) z[k] = z_min + (k + 0.5) * step;
    return z;
}

struct MaskBundle {
    PhaseMask mask;
    GSDiagnostics diagnostics;
    double partition_axis = 0;
};

inline MaskBundle build_mask(const PipelineConfig& cfg) {
    MaskBundle out;
    if (!cfg.mask_file.empty()) {
        out.mask = load_phase_mask(cfg.mask_file);
    } else {
        MaskDesign d = design_dhpsf_mask(cfg.beam, cfg.system, pupil_grid_for(cfg), cfg.gs);
        out.mask = std::move(d.mask);
        out.diagnostics = std::move(d.diagnostics);
    }
    if (cfg.mask_quantization >= 2) out.mask = quantize_phase(out.mask, cfg.mask_quantization);
    out.partition_axis = auto_partition_axis(out.mask, cfg.system);
    return out;
}

inline Volume3D build_scene(const PipelineConfig& cfg) {
    auto [nx, ny, nz] = cfg.scene_dims;
    double pitch_z = (cfg.z_max - cfg.z_min) / nz;
    Volume3D scene;
    if (cfg.scene_source == "smoke") {
        scene = make_smoke_scene();
        scene.pitch_x = scene.pitch_y = cfg.sensor_pitch;
        scene.pitch_z = (cfg.z_max - cfg.z_min) / scene.nz;
        scene.z_origin = cfg.z_min + 0.5 * scene.pitch_z;
    } else if (cfg.scene_source == "tree") {
        scene = make_tree(nx, ny, nz, cfg.sensor_pitch, pitch_z, cfg.scene_seed);
        scene.z_origin = cfg.z_min + 0.5 * pitch_z;
    } else if (cfg.scene_source == "skew_line") {
        scene = make_skew_line(nx, ny, nz, cfg.sensor_pitch, pitch_z, 0.0, nz * 0.35);
        scene.z_origin = cfg.z_min + 0.5 * pitch_z;
    } else {  // file
        scene = load_volume(cfg.scene_path);
        if (std::abs(scene.pitch_x - cfg.sensor_pitch) > 1e-9 * cfg.sensor_pitch)
            throw config_error("scene file pitch does not match stack.sensor_pitch");
    }
    return scene;
}

// The manifest embeds the full canonical config, so any output (and figure)
// is regenerable from the manifest alone.
inline std::string manifest_json(const PipelineConfig& cfg, std::uint64_t seed, double wall_seconds,
                                 const std::vector<std::string>& outputs) {
    nlohmann::json m;
    m["config"] = cfg.doc;
    m["config_hash"] = cfg.hash();
    m["version"] = kVersion;
    m["seed"] = seed;
    m["wall_time_s"] = wall_seconds;
    m["outputs"] = outputs;
    return m.dump(2);
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw io_error("cannot open for writing: " + path);
    f << text;
}

struct PipelineResult {
    ScoreReport report;
    std::vector<double> loss_trace;
    std::string depth_png;
};

// Full chain on one config. Writes containers, figures, a key=value score
// report, and the run manifest into outdir. Deterministic per (config, seed).
inline PipelineResult run_pipeline(const PipelineConfig& cfg, const std::string& outdir,
                                   std::uint64_t seed_override = 0,
                                   const IterCallback& progress = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(outdir);
    auto t0 = std::chrono::steady_clock::now();
    std::uint64_t seed = seed_override ? seed_override : cfg.noise.seed;

    MaskBundle mb = build_mask(cfg);
    save_phase_mask(mb.mask, outdir + "/mask.ps2f");

    Volume3D scene_raw = build_scene(cfg);
    Volume3D scene = surface_extract(scene_raw);
    std::vector<double> z = scene.plane_depths();

    PolarizedMaskAssembly assembly = partition_mask(mb.mask, mb.partition_axis);
    PsfStack stack = render_psf_stack(assembly, cfg.system, z, sensor_grid_for(cfg), cfg.pad_factor);
    save_psf_stack(stack, outdir + "/psf_stack.ps2f");
    {
        std::vector<RealImage> tiles;
        int step = std::max(1, stack.n_planes() / 8);
        for (int k = 0; k < stack.n_planes(); k += step) tiles.push_back(stack.plane(0, k));
        save_png_gallery(tiles, outdir + "/psf_gallery.png");
    }

    Measurement clean = image_scene(scene, stack, cfg.exposure);
    NoiseConfig nc = cfg.noise;
    nc.seed = seed;
    Measurement noisy = add_noise(clean, nc);
    save_measurement(noisy, outdir + "/measurement.ps2f", stack.pitch());

    // scale-normalized solve: regularizer presets assume measurements near unit max
    Measurement meas = noisy;
    double scale = meas.max();
    if (scale > 0)
        for (auto& img : meas.images) img.scale(1.0 / scale);
    ReconResult res = solve(meas, stack, scene, cfg.recon, nullptr, progress);
    save_recon_result(res, outdir + "/recon.ps2f", cfg.doc.dump());

    DepthMap pred = mip_depth(res.volume, cfg.mip_threshold);
    DepthMap truth = mip_depth(scene, cfg.mip_threshold);
    ScoreReport report = score(pred, truth);

    std::vector<double> depth_vis = pred.depth;
    for (std::size_t i = 0; i < depth_vis.size(); ++i)
        if (!pred.valid[i]) depth_vis[i] = std::numeric_limits<double>::quiet_NaN();
    std::string depth_png = outdir + "/depth_map.png";
    save_png_falsecolor(depth_vis, pred.width, pred.height, cfg.z_min, cfg.z_max, depth_png);

    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "mae_m=%.9g\nrmse_m=%.9g\nms_ssim=%.6f\ncoverage=%.6f\n", report.mae,
                  report.rmse, report.ms_ssim, report.coverage);
    write_text(outdir + "/score.txt", buf);

    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_text(outdir + "/run_manifest.json",
               manifest_json(cfg, seed, wall,
                             {"mask.ps2f", "psf_stack.ps2f", "measurement.ps2f", "recon.ps2f",
                              "depth_map.png", "psf_gallery.png", "score.txt"}));

    return {report, res.loss_trace, depth_png};
}

}  // namespace ps2f
