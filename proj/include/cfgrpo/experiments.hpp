// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cfgrpo/counterfactual.hpp"
#include "cfgrpo/grpo.hpp"
#include "cfgrpo/latent_model.hpp"
#include "cfgrpo/observation.hpp"
#include "cfgrpo/policy.hpp"
#include "cfgrpo/synthcorpus.hpp"

namespace cfgrpo::experiments {

using nlohmann::json;

inline const std::vector<std::string> kExperiments = {"theory-shortcut", "theory-rectify", "corpus-gen",
                                                      "sft",             "grpo",           "eval",
                                                      "ablate-mask",     "ablate-rewards", "robustness"};

struct ExperimentConfig {
    std::string experiment;
    uint64_t seed = 1;
    std::string out_dir;

    latent::LatentConfig latent;
    latent::TrainConfig latent_train;
    int latent_samples = 2000;
    std::vector<double> lambdas{0.0, 1.0, 10.0, 100.0};

    corpus::CorpusSpec corpus;
    std::string corpus_path;  // load this corpus instead of generating one
    grpo::FeaturizerConfig featurizer;
    grpo::SftConfig sft;
    grpo::GrpoConfig grpo;
    MaskStrategy mask = GaussianBlur{};
    SpotInterferenceConfig spot;
    std::vector<uint64_t> seeds;  // ablations: one full run per seed (default: {seed})
    std::string checkpoint;       // eval: policy checkpoint to score
    bool tie_evidence = true;
    double init_scale = 0.01;
    bool sample_decoding = false;

    // Sets every module seed from the experiment seed.
    void apply_seed(uint64_t s);
};

// Parses an experiment config. `name` and `seed` override fields of the file when given.
ExperimentConfig read_experiment_config(const json& j, const std::string& name, std::optional<uint64_t> seed,
                                        const std::string& out_dir);

struct MetricsReport {
    double overall_accuracy = 0.0;
    double single_accuracy = 0.0;
    double multi_accuracy = 0.0;
    size_t n_single = 0;
    size_t n_multi = 0;
    double mean_r_fmt = 0.0, mean_r_cog = 0.0, mean_r_diag = 0.0, mean_total = 0.0;
    std::optional<double> perturbed_accuracy;
    std::optional<double> robustness_drop;
    std::optional<double> counterfactual_pathology_probability;
    uint64_t seed = 0;

    json to_json() const;
};

struct EvalOptions {
    std::optional<SpotInterferenceConfig> perturb;
    bool sample = false;
    uint64_t seed = 0;
    rewards::RewardWeights weights;
};

// Scores given responses against records (exact-set accuracy plus reward means).
MetricsReport score_responses(const std::vector<const corpus::CorpusRecord*>& records,
                              const std::vector<rewards::StructuredResponse>& responses,
                              const std::set<std::string>& vocabulary, const rewards::RewardWeights& w = {});

MetricsReport evaluate(const grpo::TemplatePolicy& policy, const grpo::ObservationFeaturizer& fz,
                       const std::vector<const corpus::CorpusRecord*>& records, const EvalOptions& opt = {});

json policy_to_json(const grpo::TemplatePolicy& p, const corpus::CorpusSpec& spec, const grpo::FeaturizerConfig& f);
grpo::TemplatePolicy policy_from_json(const json& j, corpus::CorpusSpec* spec_out = nullptr,
                                      grpo::FeaturizerConfig* feat_out = nullptr);

// Everything downstream of the corpus for one seed, with cached observations.
struct Workbench {
    corpus::Corpus corpus;
    std::shared_ptr<const grpo::Grammar> grammar;
    std::unique_ptr<grpo::ObservationFeaturizer> featurizer;
    std::vector<const corpus::CorpusRecord*> train, test;
    std::vector<grpo::Observation> train_obs, test_obs;

    static Workbench build(const ExperimentConfig& cfg);
    std::vector<grpo::TrainingExample> originals() const;
    std::vector<grpo::TrainingExample> counterfactuals(const MaskStrategy& strategy) const;
    std::vector<grpo::SftExample> sft_examples() const;
    grpo::TemplatePolicy fresh_policy(const ExperimentConfig& cfg) const;
    // mean probability of a pathology diagnosis on counterfactuals of test records
    double counterfactual_pathology_probability(const grpo::TemplatePolicy& p, const MaskStrategy& strategy) const;
};

// Runs one experiment, writes its artifacts under cfg.out_dir and returns the summary.
json run_experiment(const ExperimentConfig& cfg);

} // namespace cfgrpo::experiments
