// SPDX-License-Identifier: Apache-2.0
#include "cfgrpo/observation.hpp"

#include <algorithm>
#include <cmath>

#include "cfgrpo/counterfactual.hpp"
#include "cfgrpo/error.hpp"

namespace cfgrpo::grpo {

namespace {

constexpr int kHalf = 12;  // template window is 25x25
constexpr double kLesionScale = 0.9;
constexpr double kMeanCenter = 0.5, kMeanScale = 0.06;
constexpr double kTiltScale = 0.10;
constexpr double kTextureCenter = 0.0325, kTextureScale = 0.0125;
constexpr double kHighlightScale = 25.0;

} // namespace

void FeaturizerConfig::validate() const {
    if (!(background_scale >= 0)) throw ConfigError("featurizer.background_scale must be nonnegative");
    if (!(lesion_threshold >= 0)) throw ConfigError("featurizer.lesion_threshold must be nonnegative");
    if (!(background_sigma > 0)) throw ConfigError("featurizer.background_sigma must be positive");
    if (!(highlight_level > 0 && highlight_level <= 1)) throw ConfigError("featurizer.highlight_level must lie in (0,1]");
}

ObservationFeaturizer::ObservationFeaturizer(const corpus::CorpusSpec& spec, const FeaturizerConfig& cfg)
    : spec_(spec), cfg_(cfg) {
    spec.validate();
    cfg.validate();
    const int win = 2 * kHalf + 1;
    for (int c = 0; c < spec.n_classes(); ++c) {
        const auto g = corpus::rasterize_glyph(corpus::family_of(c), kHalf, kHalf, 1.0, win, win);
        Template t;
        for (int y = 0; y < win; ++y)
            for (int x = 0; x < win; ++x)
                if (g.at(y, x)) t.on.emplace_back(y - kHalf, x - kHalf);
        const double n = win * win, k = static_cast<double>(t.on.size());
        t.mean = k / n;
        t.norm = std::sqrt(k * (1 - t.mean) * (1 - t.mean) + (n - k) * t.mean * t.mean);
        templates_.push_back(std::move(t));
    }
    dim_ = spec.n_classes() + 4 + (spec.n_classes() - 4) + (cfg.highlight_feature ? 1 : 0);
}

std::vector<std::string> ObservationFeaturizer::feature_names() const {
    std::vector<std::string> n;
    for (const auto& p : spec_.pathologies) n.push_back("lesion_" + p);
    n.insert(n.end(), {"bg_mean", "bg_tilt_x", "bg_tilt_y", "bg_texture"});
    if (spec_.n_classes() > 4) n.push_back("bg_vignette");
    if (spec_.n_classes() > 5) n.push_back("bg_band");
    if (cfg_.highlight_feature) n.push_back("bg_highlight");
    return n;
}

Observation ObservationFeaturizer::features(const RasterImage& img) const {
    CFGRPO_REQUIRE(img.height == spec_.height && img.width == spec_.width, "featurizer: image size mismatch");
    const int h = img.height, w = img.width;
    std::vector<double> x(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
            double s = 0;
            for (int c = 0; c < img.channels; ++c) s += img.at(y, xx, c);
            x[y * w + xx] = s / img.channels;
        }

    // background estimate with highlights clipped so bright spots do not fake lesion evidence
    std::vector<double> sorted = x;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    const double clip = sorted[sorted.size() / 2] + 0.15;
    std::vector<double> clipped(x.size());
    for (size_t i = 0; i < x.size(); ++i) clipped[i] = std::min(x[i], clip);
    const int rad = static_cast<int>(std::ceil(3.0 * cfg_.background_sigma));
    const auto bg = blur_plane(clipped, h, w, cfg_.background_sigma, rad);

    std::vector<double> dark(x.size());
    for (size_t i = 0; i < x.size(); ++i) dark[i] = std::max(0.0, bg[i] - x[i] - cfg_.lesion_threshold);

    // integral image of the darkness map (zero outside the image)
    std::vector<double> integ(static_cast<size_t>(h + 1) * (w + 1), 0.0);
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
            integ[(y + 1) * (w + 1) + xx + 1] =
                dark[y * w + xx] + integ[y * (w + 1) + xx + 1] + integ[(y + 1) * (w + 1) + xx] - integ[y * (w + 1) + xx];
    auto box = [&](int y0, int x0, int y1, int x1) {
        y0 = std::max(y0, 0), x0 = std::max(x0, 0), y1 = std::min(y1, h), x1 = std::min(x1, w);
        if (y0 >= y1 || x0 >= x1) return 0.0;
        return integ[y1 * (w + 1) + x1] - integ[y0 * (w + 1) + x1] - integ[y1 * (w + 1) + x0] + integ[y0 * (w + 1) + x0];
    };

    Observation obs;
    const int lo_y = h * 10 / 64, hi_y = h - h * 10 / 64;
    const int lo_x = w * 10 / 64, hi_x = w - w * 10 / 64;
    for (const auto& t : templates_) {
        double best = -1e300;
        for (int cy = lo_y; cy < hi_y; ++cy)
            for (int cx = lo_x; cx < hi_x; ++cx) {
                double s = 0;
                for (const auto& [dy, dx] : t.on) {
                    const int yy = cy + dy, xx = cx + dx;
                    if (yy >= 0 && yy < h && xx >= 0 && xx < w) s += dark[yy * w + xx];
                }
                s -= t.mean * box(cy - kHalf, cx - kHalf, cy + kHalf + 1, cx + kHalf + 1);
                best = std::max(best, s / t.norm);
            }
        obs.push_back(best / kLesionScale);
    }

    double mean = 0, sxx = 0, syy = 0, sx = 0, sy = 0;
    const double mx = (w - 1) / 2.0, my = (h - 1) / 2.0;
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
            const double v = x[y * w + xx];
            mean += v;
            sx += (xx - mx) * v;
            sy += (y - my) * v;
            sxx += (xx - mx) * (xx - mx);
            syy += (y - my) * (y - my);
        }
    mean /= static_cast<double>(x.size());
    const double gx = sx / sxx * (w / 2.0), gy = sy / syy * (h / 2.0);
    const auto fine = blur_plane(x, h, w, 1.5, 5);
    double tex = 0;
    for (size_t i = 0; i < x.size(); ++i) tex += std::abs(x[i] - fine[i]);
    tex /= static_cast<double>(x.size());

    const double bs = cfg_.background_scale;
    obs.push_back(bs * (mean - kMeanCenter) / kMeanScale);
    obs.push_back(bs * gx / kTiltScale);
    obs.push_back(bs * gy / kTiltScale);
    obs.push_back(bs * (tex - kTextureCenter) / kTextureScale);
    if (spec_.n_classes() > 4 || cfg_.highlight_feature) {
        double vig = 0, band = 0, inner = 0, outer = 0;
        size_t ni = 0, no = 0;
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                const double u = (xx - w / 2.0) / (w / 2.0), v = (y - h / 2.0) / (h / 2.0);
                const double val = x[y * w + xx];
                if (u * u + v * v < 0.25) {
                    inner += val;
                    ++ni;
                } else if (u * u + v * v > 1.0) {
                    outer += val;
                    ++no;
                }
                band += val * std::sin(2.0 * M_PI * v);
            }
        vig = inner / std::max<size_t>(ni, 1) - outer / std::max<size_t>(no, 1);
        band = 2.0 * band / static_cast<double>(x.size());
        if (spec_.n_classes() > 4) obs.push_back(bs * vig / 0.08);
        if (spec_.n_classes() > 5) obs.push_back(bs * band / 0.05);
    }
    if (cfg_.highlight_feature) {
        size_t bright = 0;
        for (double v : x) bright += v >= cfg_.highlight_level ? 1 : 0;
        obs.push_back(bs * kHighlightScale * static_cast<double>(bright) / static_cast<double>(x.size()));
    }
    for (double v : obs)
        if (!std::isfinite(v)) throw NumericalError("featurizer produced a non-finite value");
    return obs;
}

} // namespace cfgrpo::grpo
