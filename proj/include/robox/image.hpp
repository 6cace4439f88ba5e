#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "robox/common.hpp"

namespace robox {

/// Single-channel image, intensities in [0,1], row-major.
struct GrayImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> v;  // height*width

    GrayImage() = default;
    GrayImage(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), v(h * w, fill) {
        if (h < 8 || w < 8) throw ParamError("GrayImage: dimensions must be at least 8x8");
    }

    double& at(std::size_t r, std::size_t c) { return v[r * width + c]; }
    double at(std::size_t r, std::size_t c) const { return v[r * width + c]; }
    std::size_t size() const { return v.size(); }

    void clamp01() {
        for (double& x : v) x = std::min(1.0, std::max(0.0, x));
    }
};

/// Per-pixel {0,1} mask, row-major.
struct BinaryMask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> bits;  // values 0 or 1

    BinaryMask() = default;
    BinaryMask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), bits(h * w, fill) {}

    std::uint8_t& at(std::size_t r, std::size_t c) { return bits[r * width + c]; }
    std::uint8_t at(std::size_t r, std::size_t c) const { return bits[r * width + c]; }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto b : bits) n += b;
        return n;
    }

    bool operator==(const BinaryMask& o) const {
        return height == o.height && width == o.width && bits == o.bits;
    }
};

// ---------------------------------------------------------------------------
// PGM (P5) and PPM (P6) raster I/O. 8-bit, binary, deterministic bytes.
// ---------------------------------------------------------------------------

inline void write_pgm(const std::string& path, const std::vector<std::uint8_t>& pix, std::size_t h,
                      std::size_t w) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "P5\n" << w << " " << h << "\n255\n";
    f.write(reinterpret_cast<const char*>(pix.data()), static_cast<std::streamsize>(pix.size()));
    if (!f) throw IoError("write failed: " + path);
}

inline void write_pgm(const std::string& path, const GrayImage& img) {
    std::vector<std::uint8_t> pix(img.size());
    for (std::size_t i = 0; i < pix.size(); ++i) {
        double x = std::min(1.0, std::max(0.0, img.v[i]));
        pix[i] = static_cast<std::uint8_t>(std::lround(x * 255.0));
    }
    write_pgm(path, pix, img.height, img.width);
}

/// Masks are stored strictly {0,255}.
inline void write_pgm(const std::string& path, const BinaryMask& m) {
    std::vector<std::uint8_t> pix(m.bits.size());
    for (std::size_t i = 0; i < pix.size(); ++i) pix[i] = m.bits[i] ? 255 : 0;
    write_pgm(path, pix, m.height, m.width);
}

namespace detail {

inline int pgm_next_token(std::istream& f, std::string& tok) {
    tok.clear();
    int c = f.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = f.get();
        } else if (std::isspace(c)) {
            c = f.get();
        } else {
            break;
        }
    }
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = f.get();
    }
    return tok.empty() ? EOF : 0;
}

}  // namespace detail

inline void read_pgm(const std::string& path, std::vector<std::uint8_t>& pix, std::size_t& h,
                     std::size_t& w) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path);
    std::string tok;
    if (detail::pgm_next_token(f, tok) == EOF || tok != "P5") throw IoError("not a P5 PGM: " + path);
    if (detail::pgm_next_token(f, tok) == EOF) throw IoError("truncated PGM header: " + path);
    w = std::stoul(tok);
    if (detail::pgm_next_token(f, tok) == EOF) throw IoError("truncated PGM header: " + path);
    h = std::stoul(tok);
    if (detail::pgm_next_token(f, tok) == EOF) throw IoError("truncated PGM header: " + path);
    const unsigned long maxval = std::stoul(tok);
    if (maxval != 255) throw IoError("unsupported PGM maxval: " + path);
    pix.resize(h * w);
    f.read(reinterpret_cast<char*>(pix.data()), static_cast<std::streamsize>(pix.size()));
    if (f.gcount() != static_cast<std::streamsize>(pix.size())) throw IoError("truncated PGM data: " + path);
}

inline GrayImage read_gray_pgm(const std::string& path) {
    std::vector<std::uint8_t> pix;
    std::size_t h = 0, w = 0;
    read_pgm(path, pix, h, w);
    GrayImage img(h, w);
    for (std::size_t i = 0; i < pix.size(); ++i) img.v[i] = pix[i] / 255.0;
    return img;
}

inline BinaryMask read_mask_pgm(const std::string& path) {
    std::vector<std::uint8_t> pix;
    std::size_t h = 0, w = 0;
    read_pgm(path, pix, h, w);
    BinaryMask m(h, w);
    for (std::size_t i = 0; i < pix.size(); ++i) m.bits[i] = pix[i] >= 128 ? 1 : 0;
    return m;
}

/// RGB raster for plot output.
struct RgbImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> rgb;  // 3 bytes per pixel

    RgbImage(std::size_t h, std::size_t w, std::uint8_t r = 255, std::uint8_t g = 255, std::uint8_t b = 255)
        : height(h), width(w), rgb(h * w * 3) {
        for (std::size_t i = 0; i < h * w; ++i) {
            rgb[3 * i] = r;
            rgb[3 * i + 1] = g;
            rgb[3 * i + 2] = b;
        }
    }

    void set(long r, long c, std::uint8_t cr, std::uint8_t cg, std::uint8_t cb) {
        if (r < 0 || c < 0 || r >= static_cast<long>(height) || c >= static_cast<long>(width)) return;
        std::size_t i = static_cast<std::size_t>(r) * width + static_cast<std::size_t>(c);
        rgb[3 * i] = cr;
        rgb[3 * i + 1] = cg;
        rgb[3 * i + 2] = cb;
    }
};

inline void write_ppm(const std::string& path, const RgbImage& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "P6\n" << img.width << " " << img.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace robox
