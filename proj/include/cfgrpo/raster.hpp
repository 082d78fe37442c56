// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cfgrpo {

// Row-major, channel-interleaved raster with values in [0,1].
struct RasterImage {
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<double> values;

    RasterImage() = default;
    RasterImage(int h, int w, int c, double fill = 0.0);

    size_t size() const { return values.size(); }
    size_t index(int y, int x, int c = 0) const {
        return (static_cast<size_t>(y) * width + x) * channels + c;
    }
    double& at(int y, int x, int c = 0) { return values[index(y, x, c)]; }
    double at(int y, int x, int c = 0) const { return values[index(y, x, c)]; }

    void validate() const;
    // round every value to the nearest float32 so file round-trips are exact
    void quantize();
    bool operator==(const RasterImage&) const = default;
};

struct LesionMask {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> values;

    LesionMask() = default;
    LesionMask(int h, int w) : height(h), width(w), values(static_cast<size_t>(h) * w, 0) {}

    uint8_t& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
    uint8_t at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
    size_t count() const;
    bool empty() const { return count() == 0; }
    void merge(const LesionMask& other);
    bool operator==(const LesionMask&) const = default;
};

// Raster file: 8-byte header {magic "CF", u16 height, u16 width, u16 channels},
// all little-endian, then H*W*C float32 values in row-major channel-interleaved order.
std::vector<uint8_t> encode_raster(const RasterImage& img);
RasterImage decode_raster(const std::vector<uint8_t>& bytes, const std::string& what);
void save_raster(const RasterImage& img, const std::string& path);
RasterImage load_raster(const std::string& path);

RasterImage mask_to_image(const LesionMask& m);
LesionMask image_to_mask(const RasterImage& img);
void save_mask(const LesionMask& m, const std::string& path);
LesionMask load_mask(const std::string& path);

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<uint8_t>& bytes);
void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

} // namespace cfgrpo
