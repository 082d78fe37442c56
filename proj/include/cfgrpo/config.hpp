// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "json.hpp"

#include "cfgrpo/counterfactual.hpp"
#include "cfgrpo/latent_model.hpp"
#include "cfgrpo/rewards.hpp"
#include "cfgrpo/synthcorpus.hpp"

namespace cfgrpo::grpo {
struct GrpoConfig;
struct SftConfig;
struct FeaturizerConfig;
} // namespace cfgrpo::grpo

namespace cfgrpo::config {

using json = nlohmann::json;

// Each reader rejects unknown keys and wrong types with a ConfigError naming the field path.
latent::LatentConfig read_latent(const json& j, const std::string& path);
latent::TrainConfig read_latent_train(const json& j, const std::string& path);
corpus::CorpusSpec read_corpus_spec(const json& j, const std::string& path);
SpotInterferenceConfig read_spot(const json& j, const std::string& path);
MaskStrategy read_mask_strategy(const json& j, const std::string& path);
rewards::RewardWeights read_weights(const json& j, const std::string& path);
void read_grpo(const json& j, const std::string& path, grpo::GrpoConfig& out);
void read_sft(const json& j, const std::string& path, grpo::SftConfig& out);
void read_featurizer(const json& j, const std::string& path, grpo::FeaturizerConfig& out);

json to_json(const latent::LatentConfig& c);
json to_json(const latent::TrainConfig& c);
json to_json(const corpus::CorpusSpec& c);
json to_json(const SpotInterferenceConfig& c);
json to_json(const MaskStrategy& s);
json to_json(const rewards::RewardWeights& w);
json to_json(const grpo::GrpoConfig& c);
json to_json(const grpo::SftConfig& c);
json to_json(const grpo::FeaturizerConfig& c);

json parse_json(const std::string& text, const std::string& what);

} // namespace cfgrpo::config
