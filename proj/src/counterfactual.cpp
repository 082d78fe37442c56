// SPDX-License-Identifier: Apache-2.0
#include "cfgrpo/counterfactual.hpp"

#include <algorithm>
#include <cmath>

#include "cfgrpo/error.hpp"
#include "cfgrpo/rng.hpp"

namespace cfgrpo {

void SpotInterferenceConfig::validate() const {
    if (n_spots < 0) throw ConfigError("spot: n_spots must be nonnegative");
    if (!(radius_min > 0) || !(radius_max >= radius_min)) throw ConfigError("spot: need 0 < radius_min <= radius_max");
    if (!(intensity >= 0.0 && intensity <= 1.0)) throw ConfigError("spot: intensity must lie in [0,1]");
}

std::vector<double> gaussian_kernel(double sigma, int radius) {
    CFGRPO_REQUIRE(sigma > 0.0 && radius >= 1, "gaussian kernel: need sigma > 0 and radius >= 1");
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += k[i + radius];
    }
    for (double& v : k) v /= sum;
    return k;
}

int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

std::vector<double> blur_plane(const std::vector<double>& plane, int h, int w, double sigma, int radius) {
    CFGRPO_REQUIRE(h > 0 && w > 0 && plane.size() == static_cast<size_t>(h) * w, "blur_plane: bad plane shape");
    const auto k = gaussian_kernel(sigma, radius);
    std::vector<double> tmp(plane.size()), out(plane.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int j = -radius; j <= radius; ++j) s += k[j + radius] * plane[y * w + reflect_index(x + j, w)];
            tmp[y * w + x] = s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int j = -radius; j <= radius; ++j) s += k[j + radius] * tmp[reflect_index(y + j, h) * w + x];
            out[y * w + x] = s;
        }
    return out;
}

RasterImage gaussian_blur(const RasterImage& image, double sigma, int radius) {
    CFGRPO_REQUIRE(image.height > 0 && image.width > 0, "gaussian_blur: degenerate image");
    const auto k = gaussian_kernel(sigma, radius);
    const int h = image.height, w = image.width, c = image.channels;
    RasterImage tmp(h, w, c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double s = 0.0;
                for (int j = -radius; j <= radius; ++j) s += k[j + radius] * image.at(y, reflect_index(x + j, w), ch);
                tmp.at(y, x, ch) = s;
            }
    RasterImage out(h, w, c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double s = 0.0;
                for (int j = -radius; j <= radius; ++j) s += k[j + radius] * tmp.at(reflect_index(y + j, h), x, ch);
                out.at(y, x, ch) = std::clamp(s, 0.0, 1.0);
            }
    return out;
}

RasterImage synthesize_counterfactual(const RasterImage& image, const LesionMask& mask, const MaskStrategy& strategy) {
    CFGRPO_REQUIRE(mask.height == image.height && mask.width == image.width,
                   "synthesize_counterfactual: mask dimensions do not match image");
    RasterImage out = image;
    if (mask.empty()) return out;
    if (const auto* b = std::get_if<GaussianBlur>(&strategy)) {
        const RasterImage blurred = gaussian_blur(image, b->sigma, b->radius);
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x)
                if (mask.at(y, x))
                    for (int ch = 0; ch < image.channels; ++ch) out.at(y, x, ch) = blurred.at(y, x, ch);
    } else {
        const double v = std::get<SolidFill>(strategy).value;
        CFGRPO_REQUIRE(v >= 0.0 && v <= 1.0, "solid fill value must lie in [0,1]");
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x)
                if (mask.at(y, x))
                    for (int ch = 0; ch < image.channels; ++ch) out.at(y, x, ch) = v;
    }
    return out;
}

RasterImage apply_spot_interference(const RasterImage& image, const SpotInterferenceConfig& cfg) {
    cfg.validate();
    RasterImage out = image;
    if (cfg.n_spots == 0) return out;
    Rng rng(cfg.seed);
    struct Spot {
        double cy, cx, r;
    };
    std::vector<Spot> spots;
    const double h = image.height, w = image.width;
    for (int s = 0; s < cfg.n_spots; ++s) {
        const double r = rng.uniform(cfg.radius_min, cfg.radius_max);
        const double ry = std::min(r, (h - 1) / 2.0), rx = std::min(r, (w - 1) / 2.0);
        Spot cand{};
        for (int attempt = 0; attempt < 100; ++attempt) {
            cand = {rng.uniform(ry, h - 1 - ry), rng.uniform(rx, w - 1 - rx), r};
            bool clear = true;
            for (const auto& o : spots)
                if (std::hypot(cand.cy - o.cy, cand.cx - o.cx) < cand.r + o.r + 1.0) clear = false;
            if (clear) break;
        }
        spots.push_back(cand);
    }
    for (const auto& sp : spots) {
        const int y0 = std::max(0, static_cast<int>(std::floor(sp.cy - sp.r)));
        const int y1 = std::min(image.height - 1, static_cast<int>(std::ceil(sp.cy + sp.r)));
        const int x0 = std::max(0, static_cast<int>(std::floor(sp.cx - sp.r)));
        const int x1 = std::min(image.width - 1, static_cast<int>(std::ceil(sp.cx + sp.r)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double d = std::hypot(y - sp.cy, x - sp.cx);
                if (d >= sp.r) continue;
                const double a = cfg.intensity * std::sqrt(1.0 - d / sp.r);
                for (int ch = 0; ch < image.channels; ++ch) {
                    double& v = out.at(y, x, ch);
                    v = std::clamp(v * (1.0 - a) + a, 0.0, 1.0);
                }
            }
    }
    return out;
}

const char* strategy_name(const MaskStrategy& s) {
    return std::holds_alternative<GaussianBlur>(s) ? "blur" : "fill";
}

} // namespace cfgrpo
