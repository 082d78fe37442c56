// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "cfgrpo/raster.hpp"
#include "cfgrpo/synthcorpus.hpp"

namespace cfgrpo::grpo {

using Observation = std::vector<double>;

struct FeaturizerConfig {
    double background_scale = 1.5;   // gain on the background statistics block
    double lesion_threshold = 0.06;  // darkness below local background that counts as lesion evidence
    double background_sigma = 6.0;
    double highlight_level = 0.9;
    bool highlight_feature = true;

    void validate() const;
};

// Fixed, mask-free image encoder. Lesion block: best normalized match of each glyph
// template against the darkness map. Background block: mean, tilt, fine texture,
// highlight fraction (plus vignette/band statistics for more than 4 classes).
class ObservationFeaturizer {
  public:
    ObservationFeaturizer(const corpus::CorpusSpec& spec, const FeaturizerConfig& cfg);

    Observation features(const RasterImage& img) const;
    int dim() const { return dim_; }
    std::vector<std::string> feature_names() const;

  private:
    struct Template {
        std::vector<std::pair<int, int>> on;  // (dy, dx) offsets of glyph pixels
        double mean = 0, norm = 1;
    };

    corpus::CorpusSpec spec_;
    FeaturizerConfig cfg_;
    std::vector<Template> templates_;
    int dim_ = 0;
};

} // namespace cfgrpo::grpo
