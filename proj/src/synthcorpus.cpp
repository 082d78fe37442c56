// SPDX-License-Identifier: Apache-2.0
#include "cfgrpo/synthcorpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <sstream>

#include <zlib.h>

#include "cfgrpo/config.hpp"
#include "cfgrpo/error.hpp"
#include "cfgrpo/parallel.hpp"
#include "cfgrpo/rng.hpp"

namespace cfgrpo::corpus {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr uint64_t kTagLayout = 0x10;
constexpr uint64_t kTagRecord = 0x20;

const char* const kSites[] = {"gastric fundus",   "gastric antrum",  "duodenal bulb",  "sigmoid colon",
                              "transverse colon", "rectal ampulla",  "cecal pole",     "ileal loop",
                              "gastric body",     "esophageal lumen", "pyloric channel", "hepatic flexure",
                              "splenic flexure",  "descending colon", "ascending colon", "terminal ileum"};

const std::array<std::array<std::array<const char*, 3>, 2>, 6> kClassWords = {{
    {{{"sessile elevation", "rounded protrusion", "smooth dome"},
      {"regular pit pattern", "preserved glands", "uniform capillaries"}}},
    {{{"excavated crater", "fibrinous base", "raised rim"}, {"white slough", "necrotic debris", "converging folds"}}},
    {{{"linear defect", "shallow break", "flat streak"}, {"red halo", "superficial loss", "patchy exudate"}}},
    {{{"punctate clusters", "vascular dots", "grid pattern"},
      {"ectatic vessels", "cherry spots", "fern capillaries"}}},
    {{{"vertical furrow", "narrow cleft", "deep groove"}, {"sharp margins", "linear scar", "tract opening"}}},
    {{{"twin nodules", "paired bumps", "beaded swelling"}, {"granular mucosa", "papular texture", "dense crypts"}}},
}};

const std::array<std::array<const char*, 3>, 2> kNormalWords = {{
    {"no focal lesion", "even contour", "intact lining"},
    {"fine vascular net", "smooth sheen", "regular crypts"},
}};

int bit(int style, int k) { return (style >> k) & 1; }

int site_bits(const CorpusSpec& spec) { return spec.n_classes() - 2; }

std::string crc_hex(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, a.data(), static_cast<uInt>(a.size()));
    crc = crc32(crc, b.data(), static_cast<uInt>(b.size()));
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
    return buf;
}

// largest-remainder rounding of weights*total into integers summing to total
std::vector<int> apportion(const std::vector<double>& weights, int total) {
    const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<int> out(weights.size());
    std::vector<std::pair<double, size_t>> rem;
    int used = 0;
    for (size_t i = 0; i < weights.size(); ++i) {
        const double ideal = wsum > 0 ? total * weights[i] / wsum : 0.0;
        out[i] = static_cast<int>(std::floor(ideal + 1e-9));
        used += out[i];
        rem.emplace_back(ideal - out[i], i);
    }
    std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (size_t k = 0; used < total && k < rem.size(); ++k) {
        if (weights[rem[k].second] <= 0) continue;
        ++out[rem[k].second];
        ++used;
    }
    return out;
}

} // namespace

void CorpusSpec::validate() const {
    if (n_samples < 1) throw ConfigError("corpus.n_samples must be positive");
    if (n_classes() < 4 || n_classes() > 6) throw ConfigError("corpus.pathologies must list 4 to 6 classes");
    std::set<std::string> seen;
    for (const auto& p : pathologies) {
        const auto c = rewards::canonical_label(p);
        if (c.empty() || c == kNormalLabel || c.find_first_of(",;") != std::string::npos || !seen.insert(c).second)
            throw ConfigError("corpus.pathologies: invalid or duplicate label '" + p + "'");
    }
    if (!(multi_label_fraction >= 0 && multi_label_fraction <= 1))
        throw ConfigError("corpus.multi_label_fraction must lie in [0,1]");
    if (height < 32 || width < 32 || height > 1024 || width > 1024)
        throw ConfigError("corpus image size must be between 32 and 1024");
    if (channels != 1 && channels != 3) throw ConfigError("corpus.channels must be 1 or 3");
    if (background_styles != (1 << n_classes()))
        throw ConfigError("corpus.background_styles must equal 2^" + std::to_string(n_classes()) + " = " +
                          std::to_string(1 << n_classes()) + " (one binary cue per class)");
    if (!(spurious_correlation >= 0 && spurious_correlation <= 1))
        throw ConfigError("corpus.spurious_correlation must lie in [0,1]");
    if (!(train_fraction > 0 && train_fraction < 1)) throw ConfigError("corpus.train_fraction must lie in (0,1)");
}

std::vector<const CorpusRecord*> Corpus::split(const std::string& name) const {
    std::vector<const CorpusRecord*> out;
    for (const auto& r : records)
        if (r.split == name) out.push_back(&r);
    return out;
}

std::vector<Combo> label_combinations(const CorpusSpec& spec) {
    std::vector<Combo> out{{}};
    const int p = spec.n_classes();
    for (int a = 0; a < p; ++a) out.push_back({a});
    for (int a = 0; a < p; ++a)
        for (int b = a + 1; b < p; ++b) out.push_back({a, b});
    return out;
}

std::vector<double> combination_probabilities(const CorpusSpec& spec) {
    const int p = spec.n_classes();
    const int pairs = p * (p - 1) / 2;
    std::vector<double> out;
    for (const auto& c : label_combinations(spec))
        out.push_back(c.size() < 2 ? (1.0 - spec.multi_label_fraction) / (p + 1) : spec.multi_label_fraction / pairs);
    return out;
}

rewards::DiagnosisLabelSet combo_labels(const Combo& c, const CorpusSpec& spec) {
    if (c.empty()) return {kNormalLabel};
    std::vector<std::string> names;
    for (int k : c) names.push_back(spec.pathologies.at(k));
    return rewards::canonical_set(names);
}

int matched_style(const Combo& c) {
    int s = 0;
    for (int k : c) s |= 1 << k;
    return s;
}

GlyphFamily family_of(int cls) { return static_cast<GlyphFamily>(cls % 6); }

LesionMask rasterize_glyph(GlyphFamily family, double cx, double cy, double s, int height, int width) {
    LesionMask m(height, width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double d = std::hypot(dx, dy);
            bool on = false;
            switch (family) {
            case GlyphFamily::Blob: on = d <= 5.0 * s; break;
            case GlyphFamily::Ring: on = d <= 7.0 * s && d >= 7.0 * s - 2.2; break;
            case GlyphFamily::Streak: on = std::abs(dy) <= 1.3 && std::abs(dx) <= 8.0 * s; break;
            case GlyphFamily::Speckle:
                for (int i = -1; i <= 1 && !on; ++i)
                    for (int j = -1; j <= 1 && !on; ++j) on = std::hypot(dx - 4.5 * i, dy - 4.5 * j) <= 1.3;
                break;
            case GlyphFamily::Furrow: on = std::abs(dx) <= 1.3 && std::abs(dy) <= 8.0 * s; break;
            case GlyphFamily::Twin:
                on = std::hypot(dx - 5.0 * s, dy) <= 2.6 * s || std::hypot(dx + 5.0 * s, dy) <= 2.6 * s;
                break;
            }
            m.at(y, x) = on ? 1 : 0;
        }
    return m;
}

const std::vector<std::string>& environment_vocabulary(const CorpusSpec& spec) {
    static thread_local std::vector<std::string> cache;
    static thread_local int cached_for = -1;
    if (cached_for != spec.n_classes()) {
        cache = {"dim illumination", "bright illumination"};
        for (int i = 0; i < (1 << site_bits(spec)); ++i) cache.emplace_back(kSites[i]);
        cache.emplace_back("clear mucosal surface");
        cache.emplace_back("mucus-coated surface");
        cached_for = spec.n_classes();
    }
    return cache;
}

std::array<std::string, 3> class_keywords(int cls, int section) {
    CFGRPO_REQUIRE(cls >= 0 && cls < 6 && (section == 1 || section == 2), "class_keywords: bad index");
    const auto& w = kClassWords[cls][section - 1];
    return {w[0], w[1], w[2]};
}

std::array<std::string, 3> normal_keywords(int section) {
    CFGRPO_REQUIRE(section == 1 || section == 2, "normal_keywords: bad section");
    const auto& w = kNormalWords[section - 1];
    return {w[0], w[1], w[2]};
}

rewards::KeywordSet environment_keywords_for(int style, const CorpusSpec& spec, rewards::KeywordSet base) {
    const auto& v = environment_vocabulary(spec);
    const int sb = site_bits(spec);
    const int site = (style >> 1) & ((1 << sb) - 1);
    base[0] = {v[bit(style, 0)], v[2 + site], v[2 + (1 << sb) + bit(style, spec.n_classes() - 1)]};
    return base;
}

rewards::KeywordSet gold_keywords(const Combo& combo, int style, const CorpusSpec& spec) {
    rewards::KeywordSet k;
    for (int s = 1; s <= 2; ++s) {
        if (combo.empty()) {
            k[s] = normal_keywords(s);
        } else if (combo.size() == 1) {
            k[s] = class_keywords(combo[0], s);
        } else {
            const auto a = class_keywords(combo[0], s), b = class_keywords(combo[1], s);
            k[s] = {a[0], b[0], a[1]};
        }
    }
    return environment_keywords_for(style, spec, k);
}

std::string render_response_text(const rewards::KeywordSet& k, const rewards::DiagnosisLabelSet& labels,
                                 const rewards::SectionSchema& schema) {
    std::string out;
    for (int s = 0; s < 3; ++s) out += schema.headers[s] + ": " + k[s][0] + ", " + k[s][1] + ", " + k[s][2] + ".\n";
    out += rewards::kDiagnosisMarker + " " + rewards::join_labels(labels);
    return out;
}

RecordLatents draw_latents(const Combo& combo, int style, uint64_t seed, const CorpusSpec& spec) {
    Rng rng(seed);
    RecordLatents l;
    l.style = style;
    l.brightness_jitter = rng.normal(0.0, 0.012);
    l.gx_jitter = rng.normal(0.0, 0.015);
    l.gy_jitter = rng.normal(0.0, 0.015);
    l.texture_seed = rng.next_u64();
    l.depth = rng.uniform(0.22, 0.30);
    const double w = spec.width, h = spec.height;
    for (size_t i = 0; i < combo.size(); ++i) {
        LesionLatent les;
        les.cls = combo[i];
        const double base_x = combo.size() == 1 ? w / 2.0 : w * (i == 0 ? 1.0 : 2.0) / 3.0;
        les.cx = base_x + rng.uniform(-3.0, 3.0);
        les.cy = h / 2.0 + rng.uniform(-3.0, 3.0);
        les.scale = rng.uniform(0.85, 1.15);
        l.lesions.push_back(les);
    }
    return l;
}

LesionMask render_mask(const RecordLatents& l, const CorpusSpec& spec) {
    LesionMask m(spec.height, spec.width);
    for (const auto& les : l.lesions)
        m.merge(rasterize_glyph(family_of(les.cls), les.cx, les.cy, les.scale, spec.height, spec.width));
    return m;
}

RasterImage render_image(const RecordLatents& l, const CorpusSpec& spec, bool with_lesions) {
    const int h = spec.height, w = spec.width, p = spec.n_classes();
    const double b = 0.5 + 0.06 * (2 * bit(l.style, 0) - 1) + l.brightness_jitter;
    const double gx = 0.10 * (2 * bit(l.style, 1) - 1) + l.gx_jitter;
    const double gy = 0.10 * (2 * bit(l.style, 2) - 1) + l.gy_jitter;
    const double tex = 0.02 + 0.025 * bit(l.style, 3);
    const double vignette = p > 4 ? 0.08 * (2 * bit(l.style, 4) - 1) : 0.0;
    const double band = p > 5 ? 0.05 * (2 * bit(l.style, 5) - 1) : 0.0;

    Rng trng(l.texture_seed);
    std::vector<double> noise(static_cast<size_t>(h) * w);
    for (auto& v : noise) v = trng.normal();
    noise = blur_plane(noise, h, w, 0.8, 3);

    const double cx = w / 2.0, cy = h / 2.0;
    std::vector<double> plane(noise.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double u = (x - cx) / cx, v = (y - cy) / cy;
            double val = b + gx * u + gy * v + noise[y * w + x] * tex * 2.5;
            val += vignette * (0.5 - (u * u + v * v) / 2.0);
            val += band * std::sin(2.0 * M_PI * v);
            plane[y * w + x] = std::clamp(val, 0.05, 0.95);
        }
    if (with_lesions) {
        const auto m = render_mask(l, spec);
        for (size_t i = 0; i < plane.size(); ++i)
            if (m.values[i]) plane[i] = std::clamp(plane[i] - l.depth, 0.0, 1.0);
    }
    RasterImage img(h, w, spec.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < spec.channels; ++c) img.at(y, x, c) = plane[y * w + x];
    img.quantize();
    return img;
}

CorpusRecord render_record(const RecordLatents& latents, const Combo& combo, const CorpusSpec& spec) {
    for (int c : combo)
        if (c < 0 || c >= spec.n_classes()) throw ConfigError("render_record: unknown class index " + std::to_string(c));
    CFGRPO_REQUIRE(latents.lesions.size() == combo.size(), "render_record: lesion latents do not match combination");
    CorpusRecord r;
    r.image = render_image(latents, spec, true);
    r.lesion_mask = render_mask(latents, spec);
    r.query = kQuery;
    r.labels = combo_labels(combo, spec);
    r.keywords = gold_keywords(combo, latents.style, spec);
    r.gold_response = rewards::StructuredResponse::parse(render_response_text(r.keywords, r.labels));
    r.background_style = latents.style;
    r.latents = latents;
    return r;
}

Corpus generate_corpus(const CorpusSpec& spec) {
    spec.validate();
    const auto combos = label_combinations(spec);
    const auto counts = apportion(combination_probabilities(spec), spec.n_samples);
    const int n_train_total = static_cast<int>(std::lround(spec.train_fraction * spec.n_samples));

    // stratified train counts summing to the split target
    std::vector<double> tw;
    for (int c : counts) tw.push_back(static_cast<double>(c));
    std::vector<int> train = apportion(tw, n_train_total);
    std::vector<std::string> infeasible;
    for (size_t i = 0; i < combos.size(); ++i)
        if (counts[i] == 1) infeasible.push_back(rewards::join_labels(combo_labels(combos[i], spec), "+"));
    if (!infeasible.empty()) {
        std::string msg = "corpus too small to stratify; strata with a single record:";
        for (const auto& s : infeasible) msg += " " + s;
        throw ConfigError(msg);
    }
    // every populated stratum needs at least one record on each side
    for (size_t i = 0; i < combos.size(); ++i) {
        if (counts[i] == 0) continue;
        while (train[i] < 1 || train[i] > counts[i] - 1) {
            const bool need_more = train[i] < 1;
            size_t donor = combos.size();
            for (size_t j = 0; j < combos.size(); ++j) {
                if (j == i || counts[j] < 2) continue;
                if (need_more ? train[j] > 1 : train[j] < counts[j] - 1) {
                    if (donor == combos.size() || (need_more ? train[j] > train[donor] : train[j] < train[donor]))
                        donor = j;
                }
            }
            if (donor == combos.size()) throw ConfigError("corpus too small to stratify train/test splits");
            train[i] += need_more ? 1 : -1;
            train[donor] += need_more ? -1 : 1;
        }
    }

    struct Slot {
        size_t combo;
        bool is_train;
    };
    std::vector<Slot> slots;
    for (size_t i = 0; i < combos.size(); ++i)
        for (int k = 0; k < counts[i]; ++k) slots.push_back({i, k < train[i]});
    Rng layout = Rng::derive(spec.seed, kTagLayout);
    for (size_t i = slots.size(); i > 1; --i) std::swap(slots[i - 1], slots[layout.below(i)]);

    Corpus c;
    c.spec = spec;
    c.records.resize(slots.size());
    parallel_for(slots.size(), [&](size_t i) {
        const Combo& combo = combos[slots[i].combo];
        Rng rng = Rng::derive(spec.seed, kTagRecord + i * 1000003ULL);
        int style;
        if (slots[i].is_train && rng.bernoulli(spec.spurious_correlation))
            style = matched_style(combo);
        else
            style = static_cast<int>(rng.below(static_cast<uint64_t>(spec.background_styles)));
        auto rec = render_record(draw_latents(combo, style, rng.next_u64(), spec), combo, spec);
        char id[32];
        std::snprintf(id, sizeof id, "r%05zu", i);
        rec.id = id;
        rec.split = slots[i].is_train ? "train" : "test";
        c.records[i] = std::move(rec);
    });

    c.manifest.spec = spec;
    for (const auto& r : c.records) {
        ManifestEntry e;
        e.id = r.id;
        e.split = r.split;
        e.image_path = "images/" + r.id + ".raster";
        e.mask_path = "masks/" + r.id + ".raster";
        e.checksum = crc_hex(encode_raster(r.image), encode_raster(mask_to_image(r.lesion_mask)));
        c.manifest.entries.push_back(e);
    }
    return c;
}

CorpusRecord make_counterfactual_record(const CorpusRecord& record, const MaskStrategy& strategy,
                                        const CorpusSpec& spec) {
    CFGRPO_REQUIRE(!record.lesion_mask.empty(), "make_counterfactual_record: record " + record.id +
                                                    " has an empty mask (normal records have no counterfactual)");
    CorpusRecord cf = record;
    cf.id = record.id + "-cf";
    cf.image = synthesize_counterfactual(record.image, record.lesion_mask, strategy);
    cf.image.quantize();
    cf.labels = {kNormalLabel};
    cf.keywords = gold_keywords({}, record.background_style, spec);
    cf.gold_response = rewards::StructuredResponse::parse(render_response_text(cf.keywords, cf.labels));
    cf.is_counterfactual = true;
    return cf;
}

namespace {

json latents_to_json(const RecordLatents& l) {
    json les = json::array();
    for (const auto& x : l.lesions) les.push_back({{"cls", x.cls}, {"cx", x.cx}, {"cy", x.cy}, {"scale", x.scale}});
    return {{"style", l.style},
            {"brightness_jitter", l.brightness_jitter},
            {"gx_jitter", l.gx_jitter},
            {"gy_jitter", l.gy_jitter},
            {"texture_seed", l.texture_seed},
            {"depth", l.depth},
            {"lesions", les}};
}

RecordLatents latents_from_json(const json& j) {
    RecordLatents l;
    l.style = j.at("style").get<int>();
    l.brightness_jitter = j.at("brightness_jitter").get<double>();
    l.gx_jitter = j.at("gx_jitter").get<double>();
    l.gy_jitter = j.at("gy_jitter").get<double>();
    l.texture_seed = j.at("texture_seed").get<uint64_t>();
    l.depth = j.at("depth").get<double>();
    for (const auto& x : j.at("lesions"))
        l.lesions.push_back({x.at("cls").get<int>(), x.at("cx").get<double>(), x.at("cy").get<double>(),
                             x.at("scale").get<double>()});
    return l;
}

} // namespace

void save_corpus(const Corpus& c, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "images", ec);
    fs::create_directories(fs::path(dir) / "masks", ec);
    if (ec) throw IoError("cannot create corpus directory " + dir + ": " + ec.message());
    std::string manifest;
    json header = {{"kind", "header"},
                   {"schema_version", c.manifest.schema_version},
                   {"spec", config::to_json(c.spec)},
                   {"records", c.records.size()}};
    manifest += header.dump() + "\n";
    for (size_t i = 0; i < c.records.size(); ++i) {
        const auto& r = c.records[i];
        const auto& e = c.manifest.entries.at(i);
        const auto img = encode_raster(r.image);
        const auto msk = encode_raster(mask_to_image(r.lesion_mask));
        write_file((fs::path(dir) / e.image_path).string(), img);
        write_file((fs::path(dir) / e.mask_path).string(), msk);
        json kw = json::array();
        for (const auto& g : r.keywords) kw.push_back({g[0], g[1], g[2]});
        json line = {{"kind", "record"},
                     {"id", r.id},
                     {"split", e.split},
                     {"labels", std::vector<std::string>(r.labels.begin(), r.labels.end())},
                     {"keywords", kw},
                     {"response", r.gold_response.raw_text},
                     {"query", r.query},
                     {"style", r.background_style},
                     {"counterfactual", r.is_counterfactual},
                     {"image", e.image_path},
                     {"mask", e.mask_path},
                     {"checksum", crc_hex(img, msk)},
                     {"latents", latents_to_json(r.latents)}};
        manifest += line.dump() + "\n";
    }
    write_text((fs::path(dir) / "manifest.jsonl").string(), manifest);
}

Corpus load_corpus(const std::string& dir) {
    const std::string mpath = (fs::path(dir) / "manifest.jsonl").string();
    if (!fs::exists(mpath)) throw IoError("corpus manifest not found: " + mpath);
    std::istringstream in(read_text(mpath));
    std::string line;
    Corpus c;
    bool have_header = false;
    size_t expected = 0;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw CorruptionError(mpath + ":" + std::to_string(lineno) + ": malformed manifest line");
        }
        try {
            if (!have_header) {
                if (j.value("kind", "") != "header") throw CorruptionError(mpath + ": missing manifest header");
                const int v = j.at("schema_version").get<int>();
                if (v != kSchemaVersion)
                    throw IoError(mpath + ": unsupported manifest schema version " + std::to_string(v) +
                                  " (this build reads version " + std::to_string(kSchemaVersion) + ")");
                c.spec = config::read_corpus_spec(j.at("spec"), "manifest.spec");
                expected = j.at("records").get<size_t>();
                have_header = true;
                continue;
            }
            CorpusRecord r;
            ManifestEntry e;
            r.id = e.id = j.at("id").get<std::string>();
            r.split = e.split = j.at("split").get<std::string>();
            e.image_path = j.at("image").get<std::string>();
            e.mask_path = j.at("mask").get<std::string>();
            e.checksum = j.at("checksum").get<std::string>();
            const auto img = read_file((fs::path(dir) / e.image_path).string());
            const auto msk = read_file((fs::path(dir) / e.mask_path).string());
            if (crc_hex(img, msk) != e.checksum) throw CorruptionError("checksum mismatch for record " + r.id);
            try {
                r.image = decode_raster(img, e.image_path);
                r.lesion_mask = image_to_mask(decode_raster(msk, e.mask_path));
            } catch (const Error& err) {
                throw CorruptionError("record " + r.id + ": " + err.what());
            }
            for (const auto& l : j.at("labels")) r.labels.insert(l.get<std::string>());
            const auto& kw = j.at("keywords");
            for (int s = 0; s < 3; ++s)
                for (int k = 0; k < 3; ++k) r.keywords[s][k] = kw.at(s).at(k).get<std::string>();
            r.gold_response = rewards::StructuredResponse::parse(j.at("response").get<std::string>());
            r.query = j.at("query").get<std::string>();
            r.background_style = j.at("style").get<int>();
            r.is_counterfactual = j.at("counterfactual").get<bool>();
            r.latents = latents_from_json(j.at("latents"));
            c.records.push_back(std::move(r));
            c.manifest.entries.push_back(e);
        } catch (const json::exception& ex) {
            throw CorruptionError(mpath + ":" + std::to_string(lineno) + ": " + ex.what());
        }
    }
    if (!have_header) throw CorruptionError(mpath + ": empty manifest");
    if (c.records.size() != expected)
        throw CorruptionError(mpath + ": manifest lists " + std::to_string(c.records.size()) + " records, header says " +
                              std::to_string(expected));
    c.manifest.spec = c.spec;
    return c;
}

} // namespace cfgrpo::corpus
