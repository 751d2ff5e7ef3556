#pragma once
// The on-disk array container and typed save/load wrappers.
//
// Layout (all integers little-endian):
//   magic "PS2F" | u16 version | u16 dtype (0 = float32 LE) | u16 ndim |
//   u16 reserved | u64 dims[ndim] | u32 nattrs |
//   nattrs x { u32 klen, key, u32 vlen, value } | u64 payload_bytes | data
//
// payload_bytes must equal prod(dims) * 4. Attributes are UTF-8 key/value
// pairs written in sorted key order, so identical objects serialize to
// identical bytes. Numeric attributes use %.17g, which round-trips doubles.

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "ps2f/fisher.hpp"
#include "ps2f/forward.hpp"
#include "ps2f/mask.hpp"
#include "ps2f/recon.hpp"
#include "ps2f/volume.hpp"

namespace ps2f {

struct ArrayContainer {
    std::vector<std::uint64_t> dims;
    std::map<std::string, std::string> attrs;
    std::vector<float> data;

    std::uint64_t element_count() const {
        std::uint64_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(const std::string& buf, std::string path) : buf_(buf), path_(std::move(path)) {}

    std::size_t offset() const { return off_; }

    const char* take(std::size_t n, const char* what) {
        if (off_ + n > buf_.size())
            throw parse_error(path_ + ": truncated file while reading " + std::string(what), off_);
        const char* p = buf_.data() + off_;
        off_ += n;
        return p;
    }
    std::uint16_t u16(const char* what) {
        const unsigned char* p = reinterpret_cast<const unsigned char*>(take(2, what));
        return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    }
    std::uint32_t u32(const char* what) {
        const unsigned char* p = reinterpret_cast<const unsigned char*>(take(4, what));
        return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }
    std::uint64_t u64(const char* what) {
        const unsigned char* p = reinterpret_cast<const unsigned char*>(take(8, what));
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
        return v;
    }

private:
    const std::string& buf_;
    std::string path_;
    std::size_t off_ = 0;
};

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double parse_double_attr(const ArrayContainer& c, const std::string& key) {
    auto it = c.attrs.find(key);
    if (it == c.attrs.end()) throw io_error("container missing attribute '" + key + "'");
    return std::strtod(it->second.c_str(), nullptr);
}

inline std::string csv_join(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out.push_back(',');
        out += fmt_double(v[i]);
    }
    return out;
}

inline std::vector<double> csv_split(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::strtod(tok.c_str(), nullptr));
    return out;
}

inline std::string csv_join_str(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out.push_back(',');
        out += v[i];
    }
    return out;
}

inline std::vector<std::string> csv_split_str(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(tok);
    return out;
}

}  // namespace detail

inline void write_container(const ArrayContainer& c, const std::string& path) {
    if (c.data.size() != c.element_count())
        throw io_error("write_container: data length does not match dims");
    std::string out;
    out.reserve(64 + c.data.size() * 4);
    out += "PS2F";
    detail::put_u16(out, 1);                                        // version
    detail::put_u16(out, 0);                                        // dtype float32
    detail::put_u16(out, static_cast<std::uint16_t>(c.dims.size()));
    detail::put_u16(out, 0);                                        // reserved
    for (auto d : c.dims) detail::put_u64(out, d);
    detail::put_u32(out, static_cast<std::uint32_t>(c.attrs.size()));
    for (const auto& [k, v] : c.attrs) {
        detail::put_u32(out, static_cast<std::uint32_t>(k.size()));
        out += k;
        detail::put_u32(out, static_cast<std::uint32_t>(v.size()));
        out += v;
    }
    detail::put_u64(out, static_cast<std::uint64_t>(c.data.size()) * 4);
    static_assert(sizeof(float) == 4);
    std::size_t head = out.size();
    out.resize(head + c.data.size() * 4);
    std::memcpy(out.data() + head, c.data.data(), c.data.size() * 4);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw io_error("write failed: " + path);
}

inline ArrayContainer read_container(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    std::string buf = ss.str();

    detail::Reader r(buf, path);
    const char* magic = r.take(4, "magic");
    if (std::memcmp(magic, "PS2F", 4) != 0)
        throw io_error(path + ": bad magic, expected \"PS2F\", found \"" +
                       std::string(magic, 4) + "\"");
    std::uint16_t version = r.u16("version");
    if (version != 1)
        throw io_error(path + ": unsupported container version " + std::to_string(version) +
                       " (expected 1)");
    std::uint16_t dtype = r.u16("dtype");
    if (dtype != 0) throw io_error(path + ": unsupported dtype code " + std::to_string(dtype));
    std::uint16_t ndim = r.u16("ndim");
    r.u16("reserved");
    ArrayContainer c;
    for (int i = 0; i < ndim; ++i) c.dims.push_back(r.u64("dims"));
    std::uint32_t nattrs = r.u32("attribute count");
    for (std::uint32_t i = 0; i < nattrs; ++i) {
        std::uint32_t klen = r.u32("attribute key length");
        std::string key(r.take(klen, "attribute key"), klen);
        std::uint32_t vlen = r.u32("attribute value length");
        std::string val(r.take(vlen, "attribute value"), vlen);
        c.attrs.emplace(std::move(key), std::move(val));
    }
    std::uint64_t payload = r.u64("payload length");
    if (payload != c.element_count() * 4)
        throw io_error(path + ": payload length " + std::to_string(payload) +
                       " does not match dims (expected " + std::to_string(c.element_count() * 4) + ")");
    const char* data = r.take(payload, "payload");
    c.data.resize(c.element_count());
    std::memcpy(c.data.data(), data, payload);
    return c;
}

// ---- typed wrappers ----

inline void save_phase_mask(const PhaseMask& mask, const std::string& path) {
    ArrayContainer c;
    c.dims = {static_cast<std::uint64_t>(mask.grid.height), static_cast<std::uint64_t>(mask.grid.width)};
    c.attrs["kind"] = "phase_mask";
    c.attrs["pitch_m"] = detail::fmt_double(mask.grid.pitch);
    c.attrs["diameter_m"] = detail::fmt_double(mask.diameter);
    if (mask.quantization_levels > 0)
        c.attrs["quantization_levels"] = std::to_string(mask.quantization_levels);
    c.data.assign(mask.phase.begin(), mask.phase.end());
    write_container(c, path);
}

// Loads a mask container; phases outside [0, 2*pi) are wrapped into range and
// reported through `warnings`.
inline PhaseMask load_phase_mask(const std::string& path, std::vector<std::string>* warnings = nullptr) {
    ArrayContainer c = read_container(path);
    if (c.dims.size() != 2) throw io_error(path + ": phase mask must be 2-dimensional");
    Grid2D g(static_cast<int>(c.dims[1]), static_cast<int>(c.dims[0]),
             detail::parse_double_attr(c, "pitch_m"));
    PhaseMask mask(g, detail::parse_double_attr(c, "diameter_m"));
    auto it = c.attrs.find("quantization_levels");
    if (it != c.attrs.end()) mask.quantization_levels = std::atoi(it->second.c_str());
    bool wrapped = false;
    for (std::size_t i = 0; i < mask.phase.size(); ++i) {
        double p = c.data[i];
        if (p < 0.0 || p >= 2.0 * kPi) {
            // float32 storage can graze 2*pi from below after rounding
            if (std::abs(p - 2.0 * kPi) > 1e-5 && !(p < 0 && p > -1e-5)) wrapped = true;
            p = wrap_2pi(p);
        }
        mask.phase[i] = p;
    }
    if (wrapped && warnings)
        warnings->push_back(path + ": phase values outside [0, 2*pi) were wrapped into range");
    return mask;
}

inline void save_psf_stack(const PsfStack& stack, const std::string& path) {
    ArrayContainer c;
    c.dims = {static_cast<std::uint64_t>(stack.n_channels()), static_cast<std::uint64_t>(stack.n_planes()),
              static_cast<std::uint64_t>(stack.sensor_grid.height),
              static_cast<std::uint64_t>(stack.sensor_grid.width)};
    c.attrs["kind"] = "psf_stack";
    c.attrs["channels"] = detail::csv_join_str(stack.channels);
    c.attrs["z_samples_m"] = detail::csv_join(stack.z_samples);
    c.attrs["pitch_m"] = detail::fmt_double(stack.sensor_grid.pitch);
    c.data.reserve(c.element_count());
    for (const auto& ch : stack.psfs)
        for (const auto& img : ch) c.data.insert(c.data.end(), img.v.begin(), img.v.end());
    write_container(c, path);
}

inline PsfStack load_psf_stack(const std::string& path) {
    ArrayContainer c = read_container(path);
    if (c.dims.size() != 4) throw io_error(path + ": PSF stack must be 4-dimensional");
    PsfStack stack;
    stack.channels = detail::csv_split_str(c.attrs.count("channels") ? c.attrs.at("channels") : "");
    stack.z_samples = detail::csv_split(c.attrs.count("z_samples_m") ? c.attrs.at("z_samples_m") : "");
    stack.sensor_grid = Grid2D(static_cast<int>(c.dims[3]), static_cast<int>(c.dims[2]),
                               detail::parse_double_attr(c, "pitch_m"));
    if (stack.channels.size() != c.dims[0] || stack.z_samples.size() != c.dims[1])
        throw io_error(path + ": PSF stack attributes inconsistent with dims");
    stack.psfs.assign(c.dims[0], std::vector<RealImage>(c.dims[1], RealImage(stack.sensor_grid)));
    std::size_t off = 0, plane = stack.sensor_grid.size();
    for (auto& ch : stack.psfs)
        for (auto& img : ch) {
            std::copy(c.data.begin() + off, c.data.begin() + off + plane, img.v.begin());
            off += plane;
        }
    return stack;
}

inline void save_volume(const Volume3D& vol, const std::string& path,
                        std::map<std::string, std::string> extra_attrs = {}) {
    ArrayContainer c;
    c.dims = {static_cast<std::uint64_t>(vol.nz), static_cast<std::uint64_t>(vol.ny),
              static_cast<std::uint64_t>(vol.nx)};
    c.attrs = std::move(extra_attrs);
    c.attrs["kind"] = "volume";
    c.attrs["pitch_x_m"] = detail::fmt_double(vol.pitch_x);
    c.attrs["pitch_y_m"] = detail::fmt_double(vol.pitch_y);
    c.attrs["pitch_z_m"] = detail::fmt_double(vol.pitch_z);
    c.attrs["z_origin_m"] = detail::fmt_double(vol.z_origin);
    c.data.assign(vol.v.begin(), vol.v.end());
    write_container(c, path);
}

inline Volume3D load_volume(const std::string& path, std::map<std::string, std::string>* attrs = nullptr) {
    ArrayContainer c = read_container(path);
    if (c.dims.size() != 3) throw io_error(path + ": volume must be 3-dimensional");
    Volume3D vol(static_cast<int>(c.dims[2]), static_cast<int>(c.dims[1]), static_cast<int>(c.dims[0]),
                 detail::parse_double_attr(c, "pitch_x_m"), detail::parse_double_attr(c, "pitch_y_m"),
                 detail::parse_double_attr(c, "pitch_z_m"), detail::parse_double_attr(c, "z_origin_m"));
    vol.v.assign(c.data.begin(), c.data.end());
    if (attrs) *attrs = c.attrs;
    return vol;
}

inline void save_measurement(const Measurement& m, const std::string& path, double pitch) {
    if (m.images.empty()) throw io_error("save_measurement: empty measurement");
    ArrayContainer c;
    c.dims = {m.images.size(), static_cast<std::uint64_t>(m.images[0].grid.height),
              static_cast<std::uint64_t>(m.images[0].grid.width)};
    c.attrs["kind"] = "measurement";
    c.attrs["channels"] = detail::csv_join_str(m.labels);
    c.attrs["pitch_m"] = detail::fmt_double(pitch);
    c.attrs["noise_poisson"] = m.noise.poisson ? "1" : "0";
    c.attrs["noise_read_sigma"] = detail::fmt_double(m.noise.read_sigma);
    for (const auto& img : m.images) c.data.insert(c.data.end(), img.v.begin(), img.v.end());
    write_container(c, path);
}

inline Measurement load_measurement(const std::string& path) {
    ArrayContainer c = read_container(path);
    if (c.dims.size() != 3) throw io_error(path + ": measurement must be 3-dimensional");
    Measurement m;
    m.labels = detail::csv_split_str(c.attrs.count("channels") ? c.attrs.at("channels") : "");
    if (m.labels.size() != c.dims[0]) throw io_error(path + ": channel labels inconsistent with dims");
    double pitch = detail::parse_double_attr(c, "pitch_m");
    Grid2D g(static_cast<int>(c.dims[2]), static_cast<int>(c.dims[1]), pitch);
    m.noise.poisson = c.attrs.count("noise_poisson") && c.attrs.at("noise_poisson") == "1";
    m.noise.read_sigma = c.attrs.count("noise_read_sigma")
                             ? std::strtod(c.attrs.at("noise_read_sigma").c_str(), nullptr)
                             : 0.0;
    std::size_t off = 0, plane = g.size();
    for (std::size_t ch = 0; ch < c.dims[0]; ++ch) {
        RealImage img(g);
        std::copy(c.data.begin() + off, c.data.begin() + off + plane, img.v.begin());
        off += plane;
        m.images.push_back(std::move(img));
    }
    return m;
}

inline void save_crlb_map(const CrlbMap& map, const std::string& path) {
    ArrayContainer c;
    c.dims = {2, map.z_grid.size(), map.phi_grid.size()};
    c.attrs["kind"] = "crlb_map";
    c.attrs["z_grid_m"] = detail::csv_join(map.z_grid);
    c.attrs["phi_grid_rad"] = detail::csv_join(map.phi_grid);
    c.attrs["signal_photons"] = detail::fmt_double(map.photon_model.signal_photons);
    c.attrs["background"] = detail::fmt_double(map.photon_model.background);
    c.attrs["psf_label"] = map.psf_label;
    c.data.assign(map.sqrt_crlb_z.begin(), map.sqrt_crlb_z.end());
    c.data.insert(c.data.end(), map.sqrt_crlb_phi.begin(), map.sqrt_crlb_phi.end());
    write_container(c, path);
}

inline CrlbMap load_crlb_map(const std::string& path) {
    ArrayContainer c = read_container(path);
    if (c.dims.size() != 3 || c.dims[0] != 2) throw io_error(path + ": malformed CRLB map container");
    CrlbMap map;
    map.z_grid = detail::csv_split(c.attrs.at("z_grid_m"));
    map.phi_grid = detail::csv_split(c.attrs.at("phi_grid_rad"));
    map.photon_model.signal_photons = detail::parse_double_attr(c, "signal_photons");
    map.photon_model.background = detail::parse_double_attr(c, "background");
    map.psf_label = c.attrs.count("psf_label") ? c.attrs.at("psf_label") : "";
    std::size_t n = c.dims[1] * c.dims[2];
    map.sqrt_crlb_z.assign(c.data.begin(), c.data.begin() + n);
    map.sqrt_crlb_phi.assign(c.data.begin() + n, c.data.begin() + 2 * n);
    return map;
}

inline void save_recon_result(const ReconResult& res, const std::string& path,
                              const std::string& config_json = "") {
    std::map<std::string, std::string> attrs;
    attrs["kind"] = "recon_result";
    attrs["loss_trace"] = detail::csv_join(res.loss_trace);
    attrs["converged"] = res.converged ? "1" : "0";
    if (!config_json.empty()) attrs["config"] = config_json;
    save_volume(res.volume, path, std::move(attrs));
}

inline ReconResult load_recon_result(const std::string& path, std::string* config_json = nullptr) {
    std::map<std::string, std::string> attrs;
    ReconResult res;
    res.volume = load_volume(path, &attrs);
    if (attrs.count("loss_trace")) res.loss_trace = detail::csv_split(attrs.at("loss_trace"));
    res.converged = attrs.count("converged") && attrs.at("converged") == "1";
    if (config_json && attrs.count("config")) *config_json = attrs.at("config");
    return res;
}

// VascuSynth-style voxel grids: plain text ("nx ny nz" header then values) or
// raw uint8 with cubic dims inferred from the file size. Resampled to
// target_dims; the voxel pitch comes from the target physical extent.
inline Volume3D import_vascusynth(const std::string& path, std::array<int, 3> target_dims,
                                  std::array<double, 3> target_extent) {
    for (int d : target_dims)
        if (d < 1) throw config_error("import_vascusynth: target dims must be >= 1");
    for (double e : target_extent)
        if (!(e > 0)) throw config_error("import_vascusynth: target extent must be > 0");

    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    std::string buf = ss.str();
    if (buf.empty()) throw parse_error(path + ": empty file", 0);

    Volume3D src;
    bool text = true;
    for (char ch : std::string(buf, 0, std::min<std::size_t>(buf.size(), 256)))
        if (!(std::isdigit(static_cast<unsigned char>(ch)) || std::isspace(static_cast<unsigned char>(ch)) ||
              ch == '.' || ch == '-' || ch == '+' || ch == 'e' || ch == 'E')) {
            text = false;
            break;
        }
    if (text) {
        std::stringstream ts(buf);
        int nx, ny, nz;
        if (!(ts >> nx >> ny >> nz) || nx < 1 || ny < 1 || nz < 1)
            throw parse_error(path + ": expected 'nx ny nz' header", 0);
        src = Volume3D(nx, ny, nz, 1e-6, 1e-6, 1e-6);
        for (std::size_t i = 0; i < src.v.size(); ++i)
            if (!(ts >> src.v[i])) {
                auto pos = ts.tellg();
                throw parse_error(path + ": truncated voxel data at element " + std::to_string(i),
                                  pos < 0 ? buf.size() : static_cast<std::size_t>(pos));
            }
    } else {
        auto n = static_cast<std::size_t>(std::llround(std::cbrt(static_cast<double>(buf.size()))));
        if (n < 1 || n * n * n != buf.size())
            throw parse_error(path + ": raw grid size is not a cube", buf.size());
        src = Volume3D(static_cast<int>(n), static_cast<int>(n), static_cast<int>(n), 1e-6, 1e-6, 1e-6);
        for (std::size_t i = 0; i < src.v.size(); ++i)
            src.v[i] = static_cast<unsigned char>(buf[i]);
    }

    Volume3D out = resample_trilinear(src, target_dims[0], target_dims[1], target_dims[2]);
    out.pitch_x = target_extent[0] / target_dims[0];
    out.pitch_y = target_extent[1] / target_dims[1];
    out.pitch_z = target_extent[2] / target_dims[2];
    out.z_origin = -0.5 * target_extent[2] + 0.5 * out.pitch_z;  // centered about focus
    return out;
}

}  // namespace ps2f
