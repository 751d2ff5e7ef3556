#pragma once
// Pipeline configuration: a JSON document with explicit units on every
// physical quantity ("532nm", "50mm", ...). The schema is strict — unknown
// keys are rejected — and the canonical dump (sorted keys) feeds a stable
// 64-bit config hash recorded in every output manifest.

#include <json.hpp>

#include <array>
#include <fstream>

#include "ps2f/common.hpp"
#include "ps2f/mask.hpp"
#include "ps2f/optics.hpp"
#include "ps2f/recon.hpp"

namespace ps2f {

// "532nm" -> 5.32e-7 m. Accepted suffixes: nm, um (or µm), mm, cm, m.
inline double parse_length(const std::string& text) {
    const char* s = text.c_str();
    char* end = nullptr;
    double value = std::strtod(s, &end);
    if (end == s) throw config_error("cannot parse length '" + text + "'");
    std::string unit(end);
    while (!unit.empty() && unit.front() == ' ') unit.erase(unit.begin());
    if (unit == "nm") return value * 1e-9;
    if (unit == "um" || unit == "µm") return value * 1e-6;
    if (unit == "mm") return value * 1e-3;
    if (unit == "cm") return value * 1e-2;
    if (unit == "m") return value;
    throw config_error("unknown length unit in '" + text + "' (use nm/um/mm/cm/m)");
}

// FNV-1a 64-bit over the canonical (sorted-key) JSON dump.
inline std::string config_hash(const nlohmann::json& j) {
    std::string canon = j.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : canon) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& where,
                       std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw config_error(where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw config_error(where + ": unknown key '" + it.key() + "'");
    }
}

inline double get_length(const nlohmann::json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw config_error(where + ": missing '" + std::string(key) + "'");
    if (!j[key].is_string())
        throw config_error(where + "." + key + ": physical quantities must be unit strings");
    return parse_length(j[key].get<std::string>());
}

}  // namespace detail

struct PipelineConfig {
    nlohmann::json doc;  // validated raw document (canonical source of the hash)

    System4f system;
    GLBeamSpec beam;
    int pupil_samples = 512;
    double pupil_extent_factor = 2.0;  // pupil grid extent as a multiple of D
    int pad_factor = 2;
    GSConfig gs;
    int mask_quantization = 0;        // 0 = continuous
    std::string mask_file;            // load instead of designing when set

    double z_min = 0, z_max = 0;
    int z_planes = 0;
    int sensor_pixels = 63;
    double sensor_pitch = 0;

    std::string scene_source = "smoke";  // smoke | tree | skew_line | file
    std::string scene_path;
    std::array<int, 3> scene_dims = {64, 64, 64};
    std::uint64_t scene_seed = 1;
    double exposure = 1e5;

    NoiseConfig noise;
    ReconConfig recon;
    double mip_threshold = 0.02;

    std::string hash() const { return config_hash(doc); }
};

inline PipelineConfig parse_pipeline_config(const nlohmann::json& j) {
    detail::check_keys(j, "config",
                       {"optics", "beam", "pupil", "gs", "mask", "stack", "scene", "noise", "recon",
                        "evaluate"});
    PipelineConfig cfg;
    cfg.doc = j;

    if (!j.contains("optics")) throw config_error("config: missing 'optics'");
    const auto& o = j["optics"];
    detail::check_keys(o, "optics", {"wavelength", "f1", "f2", "aperture_diameter"});
    cfg.system.wavelength = detail::get_length(o, "wavelength", "optics");
    cfg.system.f1 = detail::get_length(o, "f1", "optics");
    cfg.system.f2 = detail::get_length(o, "f2", "optics");
    cfg.system.aperture_diameter = detail::get_length(o, "aperture_diameter", "optics");
    cfg.system.validate();

    if (!j.contains("beam")) throw config_error("config: missing 'beam'");
    const auto& b = j["beam"];
    detail::check_keys(b, "beam", {"waist", "modes", "slope", "intercept"});
    cfg.beam.waist = detail::get_length(b, "waist", "beam");
    cfg.beam.slope = b.value("slope", 2);
    cfg.beam.intercept = b.value("intercept", -1);
    if (!b.contains("modes") || !b["modes"].is_array())
        throw config_error("beam: 'modes' must be an array of [n, m] pairs");
    for (const auto& pair : b["modes"]) {
        if (!pair.is_array() || pair.size() != 2)
            throw config_error("beam.modes: each entry must be an [n, m] pair");
        cfg.beam.modes.emplace_back(pair[0].get<int>(), pair[1].get<int>());
    }
    cfg.beam.validate();

    if (j.contains("pupil")) {
        const auto& p = j["pupil"];
        detail::check_keys(p, "pupil", {"samples", "extent_factor", "pad_factor"});
        cfg.pupil_samples = p.value("samples", cfg.pupil_samples);
        cfg.pupil_extent_factor = p.value("extent_factor", cfg.pupil_extent_factor);
        cfg.pad_factor = p.value("pad_factor", cfg.pad_factor);
        if (cfg.pupil_samples < 32) throw config_error("pupil.samples: too small");
    }
    if (j.contains("gs")) {
        const auto& g = j["gs"];
        detail::check_keys(g, "gs", {"iterations", "convergence_tol", "modal_projection"});
        cfg.gs.iterations = g.value("iterations", cfg.gs.iterations);
        cfg.gs.convergence_tol = g.value("convergence_tol", cfg.gs.convergence_tol);
        cfg.gs.modal_projection = g.value("modal_projection", cfg.gs.modal_projection);
        cfg.gs.validate();
    }
    if (j.contains("mask")) {
        const auto& m = j["mask"];
        detail::check_keys(m, "mask", {"quantization_levels", "file"});
        cfg.mask_quantization = m.value("quantization_levels", 0);
        cfg.mask_file = m.value("file", std::string());
        if (cfg.mask_quantization == 1) throw config_error("mask.quantization_levels: must be >= 2");
    }

    if (!j.contains("stack")) throw config_error("config: missing 'stack'");
    const auto& s = j["stack"];
    detail::check_keys(s, "stack", {"z_min", "z_max", "planes", "sensor_pixels", "sensor_pitch"});
    cfg.z_min = detail::get_length(s, "z_min", "stack");
    cfg.z_max = detail::get_length(s, "z_max", "stack");
    if (!(cfg.z_max > cfg.z_min)) throw config_error("stack: z_max must exceed z_min");
    cfg.z_planes = s.value("planes", 0);
    if (cfg.z_planes < 1) throw config_error("stack.planes: must be >= 1");
    cfg.sensor_pixels = s.value("sensor_pixels", cfg.sensor_pixels);
    cfg.sensor_pitch = detail::get_length(s, "sensor_pitch", "stack");

    if (j.contains("scene")) {
        const auto& sc = j["scene"];
        detail::check_keys(sc, "scene", {"source", "path", "dims", "seed", "exposure"});
        cfg.scene_source = sc.value("source", cfg.scene_source);
        cfg.scene_path = sc.value("path", std::string());
        if (sc.contains("dims")) {
            const auto& d = sc["dims"];
            if (!d.is_array() || d.size() != 3) throw config_error("scene.dims: expected [nx, ny, nz]");
            cfg.scene_dims = {d[0].get<int>(), d[1].get<int>(), d[2].get<int>()};
        }
        cfg.scene_seed = sc.value("seed", cfg.scene_seed);
        cfg.exposure = sc.value("exposure", cfg.exposure);
        if (cfg.scene_source != "smoke" && cfg.scene_source != "tree" &&
            cfg.scene_source != "skew_line" && cfg.scene_source != "file")
            throw config_error("scene.source: must be smoke | tree | skew_line | file");
        if (cfg.scene_source == "file" && cfg.scene_path.empty())
            throw config_error("scene: source 'file' needs 'path'");
    }
    if (j.contains("noise")) {
        const auto& n = j["noise"];
        detail::check_keys(n, "noise", {"poisson", "read_sigma", "seed"});
        cfg.noise.poisson = n.value("poisson", true);
        cfg.noise.read_sigma = n.value("read_sigma", 0.0);
        cfg.noise.seed = n.value("seed", 0ULL);
        cfg.noise.validate();
    }
    if (j.contains("recon")) {
        const auto& r = j["recon"];
        detail::check_keys(r, "recon",
                           {"preset", "lambda_tv", "lambda_l1", "iterations", "step_size", "beta1",
                            "beta2", "eps", "nonneg", "estimate_weights", "seed"});
        if (r.contains("preset")) cfg.recon = recon_preset(r["preset"].get<std::string>());
        cfg.recon.lambda_tv = r.value("lambda_tv", cfg.recon.lambda_tv);
        cfg.recon.lambda_l1 = r.value("lambda_l1", cfg.recon.lambda_l1);
        cfg.recon.iterations = r.value("iterations", cfg.recon.iterations);
        cfg.recon.step_size = r.value("step_size", cfg.recon.step_size);
        cfg.recon.adam_beta1 = r.value("beta1", cfg.recon.adam_beta1);
        cfg.recon.adam_beta2 = r.value("beta2", cfg.recon.adam_beta2);
        cfg.recon.adam_eps = r.value("eps", cfg.recon.adam_eps);
        cfg.recon.nonneg = r.value("nonneg", cfg.recon.nonneg);
        cfg.recon.estimate_weights = r.value("estimate_weights", cfg.recon.estimate_weights);
        cfg.recon.seed = r.value("seed", 0ULL);
        cfg.recon.validate();
    }
    if (j.contains("evaluate")) {
        const auto& e = j["evaluate"];
        detail::check_keys(e, "evaluate", {"mip_threshold"});
        cfg.mip_threshold = e.value("mip_threshold", cfg.mip_threshold);
    }
    return cfg;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open config: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw config_error(path + ": JSON parse failure: " + e.what());
    }
    return parse_pipeline_config(j);
}

}  // namespace ps2f
