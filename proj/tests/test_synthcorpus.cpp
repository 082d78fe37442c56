// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"

#include "cfgrpo/error.hpp"
#include "cfgrpo/rewards.hpp"
#include "cfgrpo/synthcorpus.hpp"

using namespace cfgrpo;
using namespace cfgrpo::corpus;
namespace fs = std::filesystem;

namespace {

CorpusSpec small_spec(int n, uint64_t seed = 3) {
    CorpusSpec s;
    s.n_samples = n;
    s.height = s.width = 32;
    s.seed = seed;
    return s;
}

std::string temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("cfgrpo_corpus_" + name);
    fs::remove_all(p);
    return p.string();
}

// plug-in mutual information (nats) between style and label combination
double mutual_information(const std::vector<const CorpusRecord*>& rs) {
    std::map<std::pair<int, std::string>, double> joint;
    std::map<int, double> ps;
    std::map<std::string, double> pl;
    for (const auto* r : rs) {
        const auto l = rewards::join_labels(r->labels);
        joint[{r->background_style, l}] += 1;
        ps[r->background_style] += 1;
        pl[l] += 1;
    }
    const double n = static_cast<double>(rs.size());
    double mi = 0;
    for (const auto& [k, c] : joint) mi += c / n * std::log(c * n / (ps[k.first] * pl[k.second]));
    return mi;
}

const std::set<std::string> vocabulary(const CorpusSpec& s) {
    std::set<std::string> v(s.pathologies.begin(), s.pathologies.end());
    v.insert(kNormalLabel);
    return v;
}

} // namespace

TEST_CASE("render record") {
    const auto spec = small_spec(100);
    SUBCASE("normal record") {
        const auto r = render_record(draw_latents({}, 0, 5, spec), {}, spec);
        CHECK(r.lesion_mask.empty());
        CHECK(r.labels == rewards::DiagnosisLabelSet{kNormalLabel});
        REQUIRE(r.gold_response.sections.size() == 3);
        CHECK(r.gold_response.sections[1].second.find("no focal lesion") != std::string::npos);
    }
    SUBCASE("deterministic") {
        const auto a = render_record(draw_latents({0, 2}, 7, 11, spec), {0, 2}, spec);
        const auto b = render_record(draw_latents({0, 2}, 7, 11, spec), {0, 2}, spec);
        CHECK(encode_raster(a.image) == encode_raster(b.image));
        CHECK(a.lesion_mask == b.lesion_mask);
        CHECK(a.gold_response.raw_text == b.gold_response.raw_text);
    }
    SUBCASE("multi-label mask is the union of glyph footprints") {
        for (uint64_t seed = 0; seed < 10; ++seed) {
            const auto lat = draw_latents({0, 2}, 3, seed, spec);
            const auto r = render_record(lat, {0, 2}, spec);
            LesionMask expect(spec.height, spec.width);
            for (const auto& l : lat.lesions) {
                const auto g = rasterize_glyph(family_of(l.cls), l.cx, l.cy, l.scale, spec.height, spec.width);
                CHECK_FALSE(g.empty());
                for (size_t i = 0; i < g.values.size(); ++i) expect.values[i] |= g.values[i];
            }
            CHECK(r.lesion_mask == expect);
            CHECK(r.labels == rewards::DiagnosisLabelSet{"erosion", "polyp"});
            const auto kw = rewards::flatten(r.keywords);
            CHECK(kw.size() == 9);
            // morphology and texture words come from both class pools
            for (int s = 1; s <= 2; ++s) {
                bool has0 = false, has2 = false;
                for (const auto& w : r.keywords[s]) {
                    for (const auto& c : class_keywords(0, s)) has0 |= c == w;
                    for (const auto& c : class_keywords(2, s)) has2 |= c == w;
                }
                CHECK(has0);
                CHECK(has2);
            }
        }
    }
    SUBCASE("unknown class") {
        auto lat = draw_latents({1}, 0, 1, spec);
        CHECK_THROWS_AS(render_record(lat, {9}, spec), ConfigError);
    }
    SUBCASE("background depends only on the style latents") {
        auto lat = draw_latents({1}, 5, 2, spec);
        const auto with = render_image(lat, spec, true), without = render_image(lat, spec, false);
        const auto m = render_mask(lat, spec);
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x)
                if (!m.at(y, x)) CHECK(with.at(y, x) == without.at(y, x));
    }
}

TEST_CASE("generate corpus") {
    SUBCASE("no multi-label records when the fraction is zero") {
        auto spec = small_spec(100);
        spec.multi_label_fraction = 0.0;
        const auto c = generate_corpus(spec);
        CHECK(c.records.size() == 100);
        for (const auto& r : c.records) CHECK(r.labels.size() == 1);
    }
    SUBCASE("split sizes and stratification") {
        const auto spec = small_spec(1000);
        const auto c = generate_corpus(spec);
        CHECK(c.split("train").size() == 800);
        CHECK(c.split("test").size() == 200);
        std::map<std::string, std::pair<int, int>> per;
        for (const auto& r : c.records) {
            auto& e = per[rewards::join_labels(r.labels)];
            (r.split == "train" ? e.first : e.second)++;
        }
        CHECK(per.size() == label_combinations(spec).size());
        for (const auto& [k, v] : per) {
            CAPTURE(k);
            CHECK(v.first > 0);
            CHECK(v.second > 0);
        }
        // frequencies follow the spec within rounding
        const auto probs = combination_probabilities(spec);
        const auto combos = label_combinations(spec);
        for (size_t i = 0; i < combos.size(); ++i) {
            const auto& e = per[rewards::join_labels(combo_labels(combos[i], spec))];
            CHECK(std::abs(e.first + e.second - probs[i] * spec.n_samples) <= 1.0);
        }
    }
    SUBCASE("spurious correlation lives in the train split only") {
        const auto spec = small_spec(1000);
        const auto c = generate_corpus(spec);
        const auto train = c.split("train"), test = c.split("test");
        CHECK(mutual_information(train) > mutual_information(test) + 0.5);

        // majority-label-per-style classifier fitted on train
        std::map<int, std::map<std::string, int>> tally;
        std::map<std::string, int> overall;
        for (const auto* r : train) tally[r->background_style][rewards::join_labels(r->labels)]++;
        std::map<int, std::string> rule;
        for (const auto& [s, m] : tally) {
            int best = -1;
            for (const auto& [l, n] : m)
                if (n > best) best = n, rule[s] = l;
        }
        auto accuracy = [&](const std::vector<const CorpusRecord*>& rs) {
            int ok = 0;
            for (const auto* r : rs) ok += rule.count(r->background_style) && rule[r->background_style] == rewards::join_labels(r->labels);
            return static_cast<double>(ok) / rs.size();
        };
        for (const auto* r : test) overall[rewards::join_labels(r->labels)]++;
        int majority = 0;
        for (const auto& [l, n] : overall) majority = std::max(majority, n);
        CHECK(accuracy(train) >= spec.spurious_correlation - 0.05);
        CHECK(accuracy(test) <= static_cast<double>(majority) / test.size() + 0.05);
    }
    SUBCASE("mask and label consistency, grounded keywords") {
        const auto spec = small_spec(300);
        const auto c = generate_corpus(spec);
        for (const auto& r : c.records) {
            CHECK(r.lesion_mask.empty() == (r.labels == rewards::DiagnosisLabelSet{kNormalLabel}));
            for (const auto& k : rewards::flatten(r.keywords))
                CHECK(r.gold_response.raw_text.find(k) != std::string::npos);
            const auto b = rewards::score_response(r.gold_response, {r.keywords, r.labels}, vocabulary(spec), {});
            CHECK(b.total == 4.0);
        }
    }
    SUBCASE("deterministic") {
        const auto a = generate_corpus(small_spec(120, 9)), b = generate_corpus(small_spec(120, 9));
        REQUIRE(a.records.size() == b.records.size());
        for (size_t i = 0; i < a.records.size(); ++i) {
            CHECK(encode_raster(a.records[i].image) == encode_raster(b.records[i].image));
            CHECK(a.manifest.entries[i].checksum == b.manifest.entries[i].checksum);
        }
    }
    SUBCASE("infeasible stratification") {
        auto spec = small_spec(12);
        CHECK_THROWS_AS(generate_corpus(spec), ConfigError);
    }
    SUBCASE("invalid spec") {
        auto spec = small_spec(100);
        spec.spurious_correlation = 1.5;
        CHECK_THROWS_AS(generate_corpus(spec), ConfigError);
        spec = small_spec(100);
        spec.background_styles = 8;
        CHECK_THROWS_AS(generate_corpus(spec), ConfigError);
    }
}

TEST_CASE("counterfactual records") {
    const auto spec = small_spec(100);
    const auto lat = draw_latents({0}, 4, 8, spec);
    const auto rec = render_record(lat, {0}, spec);
    for (const MaskStrategy& strat : std::vector<MaskStrategy>{GaussianBlur{4.0, 12}, SolidFill{1.0}}) {
        const auto cf = make_counterfactual_record(rec, strat, spec);
        CHECK(cf.labels == rewards::DiagnosisLabelSet{kNormalLabel});
        CHECK(cf.is_counterfactual);
        CHECK(cf.background_style == rec.background_style);
        CHECK(rewards::flatten(cf.keywords).size() == 9);
        const auto b = rewards::score_response(cf.gold_response, {cf.keywords, cf.labels}, vocabulary(spec), {});
        CHECK(b.total == 4.0);
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x)
                if (!rec.lesion_mask.at(y, x)) CHECK(cf.image.at(y, x) == rec.image.at(y, x));
    }
    SUBCASE("difference from the lesion-free rendering stays within the blur support") {
        const int radius = 12;
        const auto cf = make_counterfactual_record(rec, GaussianBlur{4.0, radius}, spec);
        const auto clean = render_image(lat, spec, false);
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x) {
                if (cf.image.at(y, x) == clean.at(y, x)) continue;
                bool near = false;
                for (int dy = -radius; dy <= radius && !near; ++dy)
                    for (int dx = -radius; dx <= radius && !near; ++dx) {
                        const int yy = y + dy, xx = x + dx;
                        near = yy >= 0 && xx >= 0 && yy < spec.height && xx < spec.width && rec.lesion_mask.at(yy, xx);
                    }
                CHECK(near);
            }
    }
    const auto normal = render_record(draw_latents({}, 0, 1, spec), {}, spec);
    CHECK_THROWS_AS(make_counterfactual_record(normal, SolidFill{}, spec), ContractViolation);
}

TEST_CASE("corpus persistence") {
    auto spec = small_spec(50);
    spec.train_fraction = 0.7;  // 11 strata need 11 test records
    const auto c = generate_corpus(spec);
    const auto dir = temp_dir("roundtrip");
    save_corpus(c, dir);
    SUBCASE("round trip is bitwise") {
        const auto back = load_corpus(dir);
        REQUIRE(back.records.size() == 50);
        for (size_t i = 0; i < 50; ++i) {
            const auto &a = c.records[i], &b = back.records[i];
            CHECK(a.id == b.id);
            CHECK(a.split == b.split);
            CHECK(encode_raster(a.image) == encode_raster(b.image));
            CHECK(a.lesion_mask == b.lesion_mask);
            CHECK(a.labels == b.labels);
            CHECK(a.keywords == b.keywords);
            CHECK(a.gold_response.raw_text == b.gold_response.raw_text);
            CHECK(a.background_style == b.background_style);
        }
        CHECK(back.spec.seed == spec.seed);
    }
    SUBCASE("truncated image is reported") {
        const auto img = dir + "/" + c.manifest.entries[3].image_path;
        fs::resize_file(img, fs::file_size(img) - 4);
        try {
            load_corpus(dir);
            FAIL("expected corruption error");
        } catch (const CorruptionError& e) {
            CHECK(std::string(e.what()).find(c.records[3].id) != std::string::npos);
        }
    }
    SUBCASE("flipped byte fails the checksum") {
        const auto img = dir + "/" + c.manifest.entries[7].image_path;
        std::fstream f(img, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(20);
        f.put('\x7f');
        f.close();
        CHECK_THROWS_AS(load_corpus(dir), CorruptionError);
    }
    SUBCASE("truncated manifest") {
        const auto m = dir + "/manifest.jsonl";
        auto text = read_text(m);
        write_text(m, text.substr(0, text.size() / 2));
        CHECK_THROWS_AS(load_corpus(dir), CorruptionError);
    }
    SUBCASE("unknown schema version") {
        const auto m = dir + "/manifest.jsonl";
        auto text = read_text(m);
        const auto pos = text.find("\"schema_version\":1");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 18, "\"schema_version\":99");
        write_text(m, text);
        try {
            load_corpus(dir);
            FAIL("expected version rejection");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find("schema version 99") != std::string::npos);
        }
    }
    SUBCASE("missing directory") { CHECK_THROWS_AS(load_corpus(dir + "/nope"), IoError); }
}
