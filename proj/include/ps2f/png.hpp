#pragma once
// Minimal PNG writer for figure output (8-bit grayscale or RGB, stored-deflate
// zlib stream). Figures are write-only artifacts; nothing parses them back.

#include <fstream>

#include "ps2f/field.hpp"

namespace ps2f {
namespace detail {

inline std::uint32_t crc32_png(const unsigned char* data, std::size_t n, std::uint32_t crc = 0xffffffffu) {
    static std::uint32_t table[256];
    static bool init = false;
    if (!init) {
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        init = true;
    }
    for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
    return crc;
}

inline void png_chunk(std::string& out, const char type[4], const std::string& payload) {
    auto put_be32 = [&](std::uint32_t v) {
        out.push_back(static_cast<char>((v >> 24) & 0xff));
        out.push_back(static_cast<char>((v >> 16) & 0xff));
        out.push_back(static_cast<char>((v >> 8) & 0xff));
        out.push_back(static_cast<char>(v & 0xff));
    };
    put_be32(static_cast<std::uint32_t>(payload.size()));
    std::string body(type, 4);
    body += payload;
    out += body;
    put_be32(~crc32_png(reinterpret_cast<const unsigned char*>(body.data()), body.size()));
}

// zlib stream with stored (uncompressed) deflate blocks.
inline std::string zlib_store(const std::string& raw) {
    std::string out;
    out.push_back(0x78);
    out.push_back(0x01);
    std::size_t pos = 0;
    while (pos < raw.size() || raw.empty()) {
        std::size_t n = std::min<std::size_t>(65535, raw.size() - pos);
        bool last = pos + n >= raw.size();
        out.push_back(last ? 1 : 0);
        out.push_back(static_cast<char>(n & 0xff));
        out.push_back(static_cast<char>((n >> 8) & 0xff));
        out.push_back(static_cast<char>(~n & 0xff));
        out.push_back(static_cast<char>((~n >> 8) & 0xff));
        out.append(raw, pos, n);
        pos += n;
        if (last) break;
    }
    std::uint32_t a = 1, b = 0;
    for (unsigned char ch : raw) {
        a = (a + ch) % 65521;
        b = (b + a) % 65521;
    }
    std::uint32_t adler = (b << 16) | a;
    for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((adler >> (8 * i)) & 0xff));
    return out;
}

inline void write_png(const std::string& path, int w, int h, int channels,
                      const std::vector<unsigned char>& pixels) {
    std::string ihdr;
    auto put_be32 = [&](std::uint32_t v) {
        ihdr.push_back(static_cast<char>((v >> 24) & 0xff));
        ihdr.push_back(static_cast<char>((v >> 16) & 0xff));
        ihdr.push_back(static_cast<char>((v >> 8) & 0xff));
        ihdr.push_back(static_cast<char>(v & 0xff));
    };
    put_be32(w);
    put_be32(h);
    ihdr.push_back(8);                              // bit depth
    ihdr.push_back(channels == 1 ? 0 : 2);          // gray or truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);

    std::string raw;
    raw.reserve(static_cast<std::size_t>(h) * (1 + static_cast<std::size_t>(w) * channels));
    for (int y = 0; y < h; ++y) {
        raw.push_back(0);  // filter: none
        raw.append(reinterpret_cast<const char*>(pixels.data()) +
                       static_cast<std::size_t>(y) * w * channels,
                   static_cast<std::size_t>(w) * channels);
    }

    std::string out("\x89PNG\r\n\x1a\n", 8);
    png_chunk(out, "IHDR", ihdr);
    png_chunk(out, "IDAT", zlib_store(raw));
    png_chunk(out, "IEND", "");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

// compact viridis-like ramp, linearly interpolated
inline std::array<unsigned char, 3> falsecolor(double t) {
    static const double anchors[9][3] = {
        {68, 1, 84},   {72, 40, 120},  {62, 74, 137},  {49, 104, 142}, {38, 130, 142},
        {31, 158, 137}, {53, 183, 121}, {109, 205, 89}, {253, 231, 37}};
    t = std::clamp(t, 0.0, 1.0) * 8.0;
    int i = std::min(7, static_cast<int>(t));
    double f = t - i;
    std::array<unsigned char, 3> rgb{};
    for (int c = 0; c < 3; ++c)
        rgb[c] = static_cast<unsigned char>(anchors[i][c] + f * (anchors[i + 1][c] - anchors[i][c]));
    return rgb;
}

}  // namespace detail

// Grayscale figure, linearly scaled (or log-scaled) to the image range.
inline void save_png_gray(const RealImage& img, const std::string& path, bool log_scale = false) {
    double lo = img.min(), hi = img.max();
    std::vector<unsigned char> px(img.v.size());
    for (std::size_t i = 0; i < img.v.size(); ++i) {
        double t;
        if (log_scale) {
            double floor = std::max(hi * 1e-6, 1e-300);
            t = (std::log10(std::max(img.v[i], floor)) - std::log10(floor)) /
                std::max(1e-12, std::log10(std::max(hi, floor)) - std::log10(floor));
        } else {
            t = (img.v[i] - lo) / std::max(1e-300, hi - lo);
        }
        px[i] = static_cast<unsigned char>(std::clamp(t, 0.0, 1.0) * 255.0 + 0.5);
    }
    detail::write_png(path, img.grid.width, img.grid.height, 1, px);
}

// False-color figure over an explicit value range; NaNs render black.
inline void save_png_falsecolor(const std::vector<double>& values, int w, int h, double lo, double hi,
                                const std::string& path, bool log_scale = false) {
    std::vector<unsigned char> px(static_cast<std::size_t>(w) * h * 3, 0);
    for (std::size_t i = 0; i < values.size(); ++i) {
        double v = values[i];
        if (!std::isfinite(v)) continue;
        double t;
        if (log_scale) {
            double l = std::max(lo, hi * 1e-12);
            t = (std::log10(std::max(v, l)) - std::log10(l)) /
                std::max(1e-12, std::log10(hi) - std::log10(l));
        } else {
            t = (v - lo) / std::max(1e-300, hi - lo);
        }
        auto rgb = detail::falsecolor(t);
        px[i * 3] = rgb[0];
        px[i * 3 + 1] = rgb[1];
        px[i * 3 + 2] = rgb[2];
    }
    detail::write_png(path, w, h, 3, px);
}

// Horizontal gallery of stack planes (each tile normalized independently).
inline void save_png_gallery(const std::vector<RealImage>& tiles, const std::string& path) {
    if (tiles.empty()) throw config_error("save_png_gallery: no tiles");
    int th = tiles[0].grid.height, tw = tiles[0].grid.width;
    int w = tw * static_cast<int>(tiles.size());
    std::vector<unsigned char> px(static_cast<std::size_t>(w) * th, 0);
    for (std::size_t t = 0; t < tiles.size(); ++t) {
        double hi = tiles[t].max();
        for (int y = 0; y < th; ++y)
            for (int x = 0; x < tw; ++x) {
                double v = hi > 0 ? tiles[t].at(y, x) / hi : 0.0;
                px[static_cast<std::size_t>(y) * w + t * tw + x] =
                    static_cast<unsigned char>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
            }
    }
    detail::write_png(path, w, th, 1, px);
}

}  // namespace ps2f
