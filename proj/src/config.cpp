// SPDX-License-Identifier: Apache-2.0
#include "cfgrpo/config.hpp"

#include <set>

#include "cfgrpo/error.hpp"
#include "cfgrpo/grpo.hpp"

namespace cfgrpo::config {

namespace {

// Typed field access over one JSON object; every key must be consumed.
class Fields {
  public:
    Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        const json& v = j_.at(key);
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError("");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError("");
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v.is_number()) throw ConfigError("");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError("");
            }
            out = v.get<T>();
        } catch (const std::exception&) {
            throw ConfigError(path_ + "." + key + ": wrong type");
        }
    }

    const json* sub(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string path(const char* key) const { return path_ + "." + key; }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(path_ + "." + it.key() + ": unknown field");
    }

  private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <typename F>
auto wrap(const std::string& path, F&& f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

} // namespace

json parse_json(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(what + ": invalid JSON (" + e.what() + ")");
    }
}

latent::LatentConfig read_latent(const json& j, const std::string& path) {
    latent::LatentConfig c;
    Fields f(j, path);
    f.get("d_c", c.d_c);
    f.get("d_e", c.d_e);
    f.get("kappa_c", c.kappa_c);
    f.get("kappa_e", c.kappa_e);
    f.get("rho_e", c.rho_e);
    f.get("noise_std", c.noise_std);
    f.get("seed", c.seed);
    f.get("causal_gain", c.causal_gain);
    f.get("label_offset", c.label_offset);
    std::string map = c.causal_map == latent::CausalMap::Tanh ? "tanh" : "identity";
    f.get("causal_map", map);
    if (map == "tanh") c.causal_map = latent::CausalMap::Tanh;
    else if (map == "identity") c.causal_map = latent::CausalMap::Identity;
    else throw ConfigError(f.path("causal_map") + ": expected \"tanh\" or \"identity\"");
    f.finish();
    wrap(path, [&] { c.validate(); return 0; });
    return c;
}

latent::TrainConfig read_latent_train(const json& j, const std::string& path) {
    latent::TrainConfig c;
    Fields f(j, path);
    f.get("eta", c.eta);
    f.get("steps", c.steps);
    f.get("lambda_cf", c.lambda_cf);
    f.get("batch_size", c.batch_size);
    f.get("seed", c.seed);
    f.get("grad_tol", c.grad_tol);
    f.finish();
    c.validate();
    return c;
}

corpus::CorpusSpec read_corpus_spec(const json& j, const std::string& path) {
    corpus::CorpusSpec c;
    Fields f(j, path);
    f.get("n_samples", c.n_samples);
    f.get("pathologies", c.pathologies);
    f.get("multi_label_fraction", c.multi_label_fraction);
    f.get("height", c.height);
    f.get("width", c.width);
    f.get("channels", c.channels);
    f.get("background_styles", c.background_styles);
    f.get("spurious_correlation", c.spurious_correlation);
    f.get("train_fraction", c.train_fraction);
    f.get("seed", c.seed);
    f.finish();
    c.validate();
    return c;
}

SpotInterferenceConfig read_spot(const json& j, const std::string& path) {
    SpotInterferenceConfig c;
    Fields f(j, path);
    f.get("n_spots", c.n_spots);
    f.get("radius_min", c.radius_min);
    f.get("radius_max", c.radius_max);
    f.get("intensity", c.intensity);
    f.get("seed", c.seed);
    f.finish();
    c.validate();
    return c;
}

MaskStrategy read_mask_strategy(const json& j, const std::string& path) {
    Fields f(j, path);
    std::string kind = "blur";
    f.get("kind", kind);
    if (kind == "blur") {
        GaussianBlur b;
        f.get("sigma", b.sigma);
        f.get("radius", b.radius);
        f.finish();
        if (!(b.sigma > 0) || b.radius < 1) throw ConfigError(path + ": blur needs sigma > 0 and radius >= 1");
        return b;
    }
    if (kind == "fill") {
        SolidFill s;
        f.get("value", s.value);
        f.finish();
        if (!(s.value >= 0 && s.value <= 1)) throw ConfigError(f.path("value") + ": must lie in [0,1]");
        return s;
    }
    throw ConfigError(f.path("kind") + ": expected \"blur\" or \"fill\"");
}

rewards::RewardWeights read_weights(const json& j, const std::string& path) {
    rewards::RewardWeights w;
    Fields f(j, path);
    f.get("w_fmt", w.w_fmt);
    f.get("w_cog", w.w_cog);
    f.get("w_diag", w.w_diag);
    f.finish();
    w.validate();
    return w;
}

void read_grpo(const json& j, const std::string& path, grpo::GrpoConfig& c) {
    Fields f(j, path);
    f.get("group_size", c.group_size);
    f.get("clip_eps", c.clip_eps);
    f.get("beta", c.beta);
    f.get("learning_rate", c.learning_rate);
    f.get("steps", c.steps);
    f.get("eps_norm", c.eps_norm);
    f.get("seed", c.seed);
    f.get("batch_size", c.batch_size);
    f.get("counterfactual_fraction", c.counterfactual_fraction);
    f.get("optimizer", c.optimizer);
    f.get("adam_beta1", c.adam_beta1);
    f.get("adam_beta2", c.adam_beta2);
    f.get("adam_eps", c.adam_eps);
    f.get("strict_order", c.strict_order);
    if (const json* w = f.sub("weights")) c.weights = read_weights(*w, f.path("weights"));
    f.finish();
    c.validate();
}

void read_sft(const json& j, const std::string& path, grpo::SftConfig& c) {
    Fields f(j, path);
    f.get("learning_rate", c.learning_rate);
    f.get("epochs", c.epochs);
    f.finish();
    c.validate();
}

void read_featurizer(const json& j, const std::string& path, grpo::FeaturizerConfig& c) {
    Fields f(j, path);
    f.get("background_scale", c.background_scale);
    f.get("lesion_threshold", c.lesion_threshold);
    f.get("background_sigma", c.background_sigma);
    f.get("highlight_level", c.highlight_level);
    f.get("highlight_feature", c.highlight_feature);
    f.finish();
    c.validate();
}

json to_json(const latent::LatentConfig& c) {
    return {{"d_c", c.d_c},
            {"d_e", c.d_e},
            {"kappa_c", c.kappa_c},
            {"kappa_e", c.kappa_e},
            {"rho_e", c.rho_e},
            {"noise_std", c.noise_std},
            {"seed", c.seed},
            {"causal_gain", c.causal_gain},
            {"label_offset", c.label_offset},
            {"causal_map", c.causal_map == latent::CausalMap::Tanh ? "tanh" : "identity"}};
}

json to_json(const latent::TrainConfig& c) {
    return {{"eta", c.eta},           {"steps", c.steps}, {"lambda_cf", c.lambda_cf},
            {"batch_size", c.batch_size}, {"seed", c.seed},   {"grad_tol", c.grad_tol}};
}

json to_json(const corpus::CorpusSpec& c) {
    return {{"n_samples", c.n_samples},
            {"pathologies", c.pathologies},
            {"multi_label_fraction", c.multi_label_fraction},
            {"height", c.height},
            {"width", c.width},
            {"channels", c.channels},
            {"background_styles", c.background_styles},
            {"spurious_correlation", c.spurious_correlation},
            {"train_fraction", c.train_fraction},
            {"seed", c.seed}};
}

json to_json(const SpotInterferenceConfig& c) {
    return {{"n_spots", c.n_spots},
            {"radius_min", c.radius_min},
            {"radius_max", c.radius_max},
            {"intensity", c.intensity},
            {"seed", c.seed}};
}

json to_json(const MaskStrategy& s) {
    if (const auto* b = std::get_if<GaussianBlur>(&s)) return {{"kind", "blur"}, {"sigma", b->sigma}, {"radius", b->radius}};
    return {{"kind", "fill"}, {"value", std::get<SolidFill>(s).value}};
}

json to_json(const rewards::RewardWeights& w) { return {{"w_fmt", w.w_fmt}, {"w_cog", w.w_cog}, {"w_diag", w.w_diag}}; }

json to_json(const grpo::GrpoConfig& c) {
    return {{"group_size", c.group_size},
            {"clip_eps", c.clip_eps},
            {"beta", c.beta},
            {"learning_rate", c.learning_rate},
            {"steps", c.steps},
            {"eps_norm", c.eps_norm},
            {"seed", c.seed},
            {"batch_size", c.batch_size},
            {"counterfactual_fraction", c.counterfactual_fraction},
            {"optimizer", c.optimizer},
            {"adam_beta1", c.adam_beta1},
            {"adam_beta2", c.adam_beta2},
            {"adam_eps", c.adam_eps},
            {"strict_order", c.strict_order},
            {"weights", to_json(c.weights)}};
}

json to_json(const grpo::SftConfig& c) { return {{"learning_rate", c.learning_rate}, {"epochs", c.epochs}}; }

json to_json(const grpo::FeaturizerConfig& c) {
    return {{"background_scale", c.background_scale},
            {"lesion_threshold", c.lesion_threshold},
            {"background_sigma", c.background_sigma},
            {"highlight_level", c.highlight_level},
            {"highlight_feature", c.highlight_feature}};
}

} // namespace cfgrpo::config
