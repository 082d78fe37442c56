// SPDX-License-Identifier: Apache-2.0
#include "cfgrpo/raster.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "cfgrpo/error.hpp"

namespace cfgrpo {

namespace {

constexpr uint8_t kMagic0 = 'C';
constexpr uint8_t kMagic1 = 'F';
constexpr size_t kHeader = 8;

void put_u16(std::vector<uint8_t>& b, uint16_t v) {
    b.push_back(static_cast<uint8_t>(v & 0xFF));
    b.push_back(static_cast<uint8_t>(v >> 8));
}

uint16_t get_u16(const std::vector<uint8_t>& b, size_t at) {
    return static_cast<uint16_t>(b[at] | (b[at + 1] << 8));
}

} // namespace

RasterImage::RasterImage(int h, int w, int c, double fill)
    : height(h), width(w), channels(c), values(static_cast<size_t>(h) * w * c, fill) {}

void RasterImage::validate() const {
    CFGRPO_REQUIRE(height > 0 && width > 0, "raster: degenerate image dimensions");
    CFGRPO_REQUIRE(channels == 1 || channels == 3, "raster: channels must be 1 or 3");
    CFGRPO_REQUIRE(values.size() == static_cast<size_t>(height) * width * channels, "raster: value count mismatch");
    for (double v : values) CFGRPO_REQUIRE(std::isfinite(v) && v >= 0.0 && v <= 1.0, "raster: value outside [0,1]");
}

void RasterImage::quantize() {
    for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

size_t LesionMask::count() const {
    size_t n = 0;
    for (auto v : values) n += v ? 1 : 0;
    return n;
}

void LesionMask::merge(const LesionMask& other) {
    CFGRPO_REQUIRE(other.height == height && other.width == width, "mask merge: dimension mismatch");
    for (size_t i = 0; i < values.size(); ++i) values[i] = (values[i] || other.values[i]) ? 1 : 0;
}

std::vector<uint8_t> encode_raster(const RasterImage& img) {
    CFGRPO_REQUIRE(img.height > 0 && img.width > 0 && img.height <= 65535 && img.width <= 65535,
                   "raster: dimensions not encodable");
    std::vector<uint8_t> b;
    b.reserve(kHeader + img.values.size() * 4);
    b.push_back(kMagic0);
    b.push_back(kMagic1);
    put_u16(b, static_cast<uint16_t>(img.height));
    put_u16(b, static_cast<uint16_t>(img.width));
    put_u16(b, static_cast<uint16_t>(img.channels));
    for (double v : img.values) {
        const float f = static_cast<float>(v);
        uint32_t u;
        std::memcpy(&u, &f, 4);
        for (int k = 0; k < 4; ++k) b.push_back(static_cast<uint8_t>((u >> (8 * k)) & 0xFF));
    }
    return b;
}

RasterImage decode_raster(const std::vector<uint8_t>& b, const std::string& what) {
    if (b.size() < kHeader) throw IoError(what + ": truncated raster header");
    if (b[0] != kMagic0 || b[1] != kMagic1) throw IoError(what + ": bad raster magic");
    RasterImage img;
    img.height = get_u16(b, 2);
    img.width = get_u16(b, 4);
    img.channels = get_u16(b, 6);
    if (img.height == 0 || img.width == 0 || (img.channels != 1 && img.channels != 3))
        throw IoError(what + ": invalid raster dimensions");
    const size_t n = static_cast<size_t>(img.height) * img.width * img.channels;
    if (b.size() != kHeader + 4 * n)
        throw IoError(what + ": raster payload size " + std::to_string(b.size() - kHeader) + " != expected " +
                      std::to_string(4 * n));
    img.values.resize(n);
    for (size_t i = 0; i < n; ++i) {
        uint32_t u = 0;
        for (int k = 0; k < 4; ++k) u |= static_cast<uint32_t>(b[kHeader + 4 * i + k]) << (8 * k);
        float f;
        std::memcpy(&f, &u, 4);
        img.values[i] = f;
    }
    return img;
}

void save_raster(const RasterImage& img, const std::string& path) { write_file(path, encode_raster(img)); }

RasterImage load_raster(const std::string& path) { return decode_raster(read_file(path), path); }

RasterImage mask_to_image(const LesionMask& m) {
    RasterImage img(m.height, m.width, 1);
    for (size_t i = 0; i < m.values.size(); ++i) img.values[i] = m.values[i] ? 1.0 : 0.0;
    return img;
}

LesionMask image_to_mask(const RasterImage& img) {
    CFGRPO_REQUIRE(img.channels == 1, "mask raster must have one channel");
    LesionMask m(img.height, img.width);
    for (size_t i = 0; i < img.values.size(); ++i) {
        const double v = img.values[i];
        CFGRPO_REQUIRE(v == 0.0 || v == 1.0, "mask raster must be binary");
        m.values[i] = v == 1.0 ? 1 : 0;
    }
    return m;
}

void save_mask(const LesionMask& m, const std::string& path) { save_raster(mask_to_image(m), path); }

LesionMask load_mask(const std::string& path) {
    try {
        return image_to_mask(load_raster(path));
    } catch (const ContractViolation& e) {
        throw IoError(path + ": " + e.what());
    }
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    const auto parent = std::filesystem::path(path).parent_path();
    std::error_code ec;
    if (!parent.empty()) std::filesystem::create_directories(parent, ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path);
}

void write_text(const std::string& path, const std::string& text) {
    write_file(path, std::vector<uint8_t>(text.begin(), text.end()));
}

std::string read_text(const std::string& path) {
    const auto b = read_file(path);
    return std::string(b.begin(), b.end());
}

} // namespace cfgrpo
