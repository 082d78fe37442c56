// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfgrpo/counterfactual.hpp"
#include "cfgrpo/raster.hpp"
#include "cfgrpo/rewards.hpp"

namespace cfgrpo::corpus {

inline constexpr int kSchemaVersion = 1;
inline const std::string kNormalLabel = "normal";
inline const std::string kQuery =
    "Examine the endoscopic image. Describe location and imaging environment, mucosal morphology and focal "
    "lesions, surface texture and microvascular architecture, then state the diagnosis.";

enum class GlyphFamily { Blob, Ring, Streak, Speckle, Furrow, Twin };

struct CorpusSpec {
    int n_samples = 2500;
    std::vector<std::string> pathologies{"polyp", "ulcer", "erosion", "angiodysplasia"};
    double multi_label_fraction = 0.5;
    int height = 64;
    int width = 64;
    int channels = 1;
    int background_styles = 16;  // must equal 2^|pathologies|: one binary cue per class
    double spurious_correlation = 0.95;
    double train_fraction = 0.8;
    uint64_t seed = 1;

    int n_classes() const { return static_cast<int>(pathologies.size()); }
    void validate() const;
};

// A label combination: empty = normal, otherwise sorted class indices.
using Combo = std::vector<int>;
std::vector<Combo> label_combinations(const CorpusSpec& spec);
std::vector<double> combination_probabilities(const CorpusSpec& spec);
rewards::DiagnosisLabelSet combo_labels(const Combo& c, const CorpusSpec& spec);
// style whose cue bits name exactly the classes in the combination
int matched_style(const Combo& c);

struct LesionLatent {
    int cls = 0;
    double cx = 0, cy = 0, scale = 1.0;
};

struct RecordLatents {
    int style = 0;
    double brightness_jitter = 0, gx_jitter = 0, gy_jitter = 0;
    uint64_t texture_seed = 0;
    double depth = 0.25;
    std::vector<LesionLatent> lesions;
};

struct CorpusRecord {
    std::string id;
    RasterImage image;
    LesionMask lesion_mask;
    std::string query;
    rewards::StructuredResponse gold_response;
    rewards::KeywordSet keywords;
    rewards::DiagnosisLabelSet labels;
    int background_style = 0;
    bool is_counterfactual = false;
    std::string split;  // "train" or "test"
    RecordLatents latents;
};

struct ManifestEntry {
    std::string id;
    std::string split;
    std::string image_path;
    std::string mask_path;
    std::string checksum;
};

struct Manifest {
    int schema_version = kSchemaVersion;
    CorpusSpec spec;
    std::vector<ManifestEntry> entries;
};

struct Corpus {
    CorpusSpec spec;
    std::vector<CorpusRecord> records;
    Manifest manifest;

    std::vector<const CorpusRecord*> split(const std::string& name) const;
};

GlyphFamily family_of(int cls);
LesionMask rasterize_glyph(GlyphFamily family, double cx, double cy, double scale, int height, int width);

// Keyword tables. section 0 words come from the background cues, sections 1 and 2 from the classes.
const std::vector<std::string>& environment_vocabulary(const CorpusSpec& spec);
std::array<std::string, 3> class_keywords(int cls, int section);
std::array<std::string, 3> normal_keywords(int section);
rewards::KeywordSet environment_keywords_for(int style, const CorpusSpec& spec, rewards::KeywordSet base);
rewards::KeywordSet gold_keywords(const Combo& combo, int style, const CorpusSpec& spec);
std::string render_response_text(const rewards::KeywordSet& k, const rewards::DiagnosisLabelSet& labels,
                                 const rewards::SectionSchema& schema = {});

RecordLatents draw_latents(const Combo& combo, int style, uint64_t seed, const CorpusSpec& spec);
RasterImage render_image(const RecordLatents& latents, const CorpusSpec& spec, bool with_lesions = true);
LesionMask render_mask(const RecordLatents& latents, const CorpusSpec& spec);
CorpusRecord render_record(const RecordLatents& latents, const Combo& combo, const CorpusSpec& spec);

Corpus generate_corpus(const CorpusSpec& spec);
CorpusRecord make_counterfactual_record(const CorpusRecord& record, const MaskStrategy& strategy,
                                        const CorpusSpec& spec);

void save_corpus(const Corpus& c, const std::string& dir);
Corpus load_corpus(const std::string& dir);

} // namespace cfgrpo::corpus
