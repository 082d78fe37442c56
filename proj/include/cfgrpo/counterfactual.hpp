// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "cfgrpo/raster.hpp"

namespace cfgrpo {

struct GaussianBlur {
    double sigma = 8.0;
    int radius = 24;
};

struct SolidFill {
    double value = 1.0;
};

using MaskStrategy = std::variant<GaussianBlur, SolidFill>;

struct SpotInterferenceConfig {
    int n_spots = 8;
    double radius_min = 3.0;
    double radius_max = 7.0;
    double intensity = 0.9;
    uint64_t seed = 0;

    void validate() const;
};

// Normalized 1-D kernel of length 2*radius+1.
std::vector<double> gaussian_kernel(double sigma, int radius);
// Symmetric (half-sample) reflection of an index into [0, n).
int reflect_index(int i, int n);

RasterImage gaussian_blur(const RasterImage& image, double sigma, int radius);
// Same separable blur on an unconstrained single-channel plane (no clamping).
std::vector<double> blur_plane(const std::vector<double>& plane, int height, int width, double sigma, int radius);
RasterImage synthesize_counterfactual(const RasterImage& image, const LesionMask& mask, const MaskStrategy& strategy);
RasterImage apply_spot_interference(const RasterImage& image, const SpotInterferenceConfig& cfg);

const char* strategy_name(const MaskStrategy& s);

} // namespace cfgrpo
