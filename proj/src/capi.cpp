// SPDX-License-Identifier: Apache-2.0
#include "cfgrpo/cfgrpo.h"

#include <cstring>
#include <new>
#include <string>

#include "cfgrpo/config.hpp"
#include "cfgrpo/counterfactual.hpp"
#include "cfgrpo/error.hpp"
#include "cfgrpo/experiments.hpp"
#include "cfgrpo/parallel.hpp"
#include "cfgrpo/raster.hpp"
#include "cfgrpo/rewards.hpp"

struct cfgrpo_image {
    cfgrpo::RasterImage img;
};

namespace {

using nlohmann::json;
using namespace cfgrpo;

thread_local std::string g_last_error;

cfgrpo_status fail(cfgrpo_status s, const std::string& msg) {
    g_last_error = msg;
    return s;
}

template <typename F>
cfgrpo_status guarded(F&& f) {
    g_last_error.clear();
    try {
        f();
        return CFGRPO_OK;
    } catch (const Error& e) {
        return fail(static_cast<cfgrpo_status>(e.kind()), e.what());
    } catch (const std::bad_alloc&) {
        return fail(CFGRPO_E_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return fail(CFGRPO_E_INTERNAL, e.what());
    } catch (...) {
        return fail(CFGRPO_E_INTERNAL, "unknown error");
    }
}

char* dup_string(const std::string& s) {
    char* p = static_cast<char*>(std::malloc(s.size() + 1));
    if (!p) throw std::bad_alloc();
    std::memcpy(p, s.c_str(), s.size() + 1);
    return p;
}

void require_out(const void* p, const char* what) {
    CFGRPO_REQUIRE(p != nullptr, std::string(what) + " must not be null");
}

json parse_or_empty(const char* text, const char* what) {
    if (!text || !*text) return json::object();
    return config::parse_json(text, what);
}

rewards::KeywordSet read_keywords(const json& j, const std::string& where) {
    rewards::KeywordSet k;
    std::vector<std::string> flat;
    try {
        if (j.is_array() && !j.empty() && j[0].is_array()) {
            for (const auto& g : j)
                for (const auto& w : g) flat.push_back(w.get<std::string>());
        } else {
            flat = j.get<std::vector<std::string>>();
        }
    } catch (const json::exception&) {
        throw ConfigError(where + ".keywords: expected 9 strings (flat or 3x3)");
    }
    if (flat.size() != 9) throw ConfigError(where + ".keywords: expected 9 keywords, got " + std::to_string(flat.size()));
    for (size_t i = 0; i < 9; ++i) k[i / 3][i % 3] = flat[i];
    return k;
}

} // namespace

extern "C" {

const char* cfgrpo_version(void) { return "0.1.0"; }

const char* cfgrpo_last_error(void) { return g_last_error.c_str(); }

void cfgrpo_set_threads(int n) { set_thread_count(n < 0 ? 0 : n); }

cfgrpo_status cfgrpo_image_create(int height, int width, int channels, const double* values, cfgrpo_image** out) {
    return guarded([&] {
        require_out(out, "out");
        CFGRPO_REQUIRE(height > 0 && width > 0 && channels > 0, "image dimensions must be positive");
        auto* h = new cfgrpo_image{RasterImage(height, width, channels)};
        if (values) std::copy(values, values + h->img.size(), h->img.values.begin());
        try {
            h->img.validate();
        } catch (...) {
            delete h;
            throw;
        }
        *out = h;
    });
}

cfgrpo_status cfgrpo_image_load(const char* path, cfgrpo_image** out) {
    return guarded([&] {
        require_out(out, "out");
        require_out(path, "path");
        *out = new cfgrpo_image{load_raster(path)};
    });
}

cfgrpo_status cfgrpo_image_save(const cfgrpo_image* img, const char* path) {
    return guarded([&] {
        require_out(img, "image");
        require_out(path, "path");
        save_raster(img->img, path);
    });
}

void cfgrpo_image_shape(const cfgrpo_image* img, int* height, int* width, int* channels) {
    if (height) *height = img ? img->img.height : 0;
    if (width) *width = img ? img->img.width : 0;
    if (channels) *channels = img ? img->img.channels : 0;
}

const double* cfgrpo_image_values(const cfgrpo_image* img) { return img ? img->img.values.data() : nullptr; }

void cfgrpo_image_free(cfgrpo_image* img) { delete img; }

cfgrpo_status cfgrpo_blur(const cfgrpo_image* img, double sigma, int radius, cfgrpo_image** out) {
    return guarded([&] {
        require_out(img, "image");
        require_out(out, "out");
        *out = new cfgrpo_image{gaussian_blur(img->img, sigma, radius)};
    });
}

cfgrpo_status cfgrpo_counterfactual(const cfgrpo_image* img, const cfgrpo_image* mask, const char* strategy_json,
                                    cfgrpo_image** out) {
    return guarded([&] {
        require_out(img, "image");
        require_out(mask, "mask");
        require_out(out, "out");
        const json j = parse_or_empty(strategy_json, "strategy");
        const MaskStrategy s = j.empty() ? MaskStrategy{GaussianBlur{}} : config::read_mask_strategy(j, "strategy");
        *out = new cfgrpo_image{synthesize_counterfactual(img->img, image_to_mask(mask->img), s)};
    });
}

cfgrpo_status cfgrpo_perturb(const cfgrpo_image* img, const char* spot_json, cfgrpo_image** out) {
    return guarded([&] {
        require_out(img, "image");
        require_out(out, "out");
        const auto cfg = config::read_spot(parse_or_empty(spot_json, "spot"), "spot");
        *out = new cfgrpo_image{apply_spot_interference(img->img, cfg)};
    });
}

cfgrpo_status cfgrpo_score_rewards(const char* jsonl_path, const char* options_json, char** out_json) {
    return guarded([&] {
        require_out(jsonl_path, "path");
        require_out(out_json, "out_json");
        const json opt = parse_or_empty(options_json, "options");
        rewards::RewardWeights w;
        bool strict = false;
        std::set<std::string> base_vocab;
        for (auto it = opt.begin(); it != opt.end(); ++it) {
            if (it.key() == "weights") w = config::read_weights(*it, "options.weights");
            else if (it.key() == "strict_order" && it->is_boolean()) strict = it->get<bool>();
            else if (it.key() == "vocabulary" && it->is_array()) {
                for (const auto& v : *it) {
                    if (!v.is_string()) throw ConfigError("options.vocabulary: expected strings");
                    base_vocab.insert(v.get<std::string>());
                }
            } else
                throw ConfigError("options." + it.key() + ": unknown field or wrong type");
        }
        if (base_vocab.empty()) {
            for (const auto& p : corpus::CorpusSpec{}.pathologies) base_vocab.insert(p);
            base_vocab.insert(corpus::kNormalLabel);
        }
        const std::string text = read_text(jsonl_path);
        json records = json::array();
        double s_fmt = 0, s_cog = 0, s_diag = 0, s_total = 0;
        size_t n = 0, lineno = 0, pos = 0;
        while (pos <= text.size()) {
            size_t end = text.find('\n', pos);
            if (end == std::string::npos) end = text.size();
            std::string line = text.substr(pos, end - pos);
            pos = end + 1;
            ++lineno;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            const std::string where = "line " + std::to_string(lineno);
            const json r = config::parse_json(line, where);
            if (!r.is_object() || !r.contains("response") || !r["response"].is_string() || !r.contains("keywords") ||
                !r.contains("gold_labels") || !r["gold_labels"].is_array())
                throw ConfigError(where + ": expected {response, keywords, gold_labels}");
            std::vector<std::string> gold;
            for (const auto& g : r["gold_labels"]) {
                if (!g.is_string()) throw ConfigError(where + ".gold_labels: expected strings");
                gold.push_back(g.get<std::string>());
            }
            auto vocab = base_vocab;
            vocab.insert(gold.begin(), gold.end());
            const auto resp = rewards::StructuredResponse::parse(r["response"].get<std::string>());
            const auto b = rewards::score_response(resp, {read_keywords(r["keywords"], where), rewards::canonical_set(gold)},
                                                   vocab, w, {}, strict);
            const auto pred = rewards::extract_diagnosis(resp, vocab);
            records.push_back({{"line", lineno},
                               {"r_fmt", b.r_fmt},
                               {"r_cog", b.r_cog},
                               {"r_diag", b.r_diag},
                               {"total", b.total},
                               {"predicted", std::vector<std::string>(pred.begin(), pred.end())}});
            s_fmt += b.r_fmt;
            s_cog += b.r_cog;
            s_diag += b.r_diag;
            s_total += b.total;
            ++n;
        }
        const double d = n ? static_cast<double>(n) : 1.0;
        const json result = {{"records", records},
                             {"aggregate",
                              {{"count", n},
                               {"mean_r_fmt", s_fmt / d},
                               {"mean_r_cog", s_cog / d},
                               {"mean_r_diag", s_diag / d},
                               {"mean_total", s_total / d}}},
                             {"weights", config::to_json(w)}};
        *out_json = dup_string(result.dump(2));
    });
}

cfgrpo_status cfgrpo_run_experiment(const char* name, const char* config_json, const char* out_dir, uint64_t seed,
                                    int has_seed, char** out_json) {
    return guarded([&] {
        require_out(out_json, "out_json");
        const json j = parse_or_empty(config_json, "config");
        std::optional<uint64_t> s;
        if (has_seed) s = seed;
        const auto cfg = experiments::read_experiment_config(j, name ? name : "", s, out_dir ? out_dir : "");
        *out_json = dup_string(experiments::run_experiment(cfg).dump(2));
    });
}

void cfgrpo_string_free(char* s) { std::free(s); }

} // extern "C"
