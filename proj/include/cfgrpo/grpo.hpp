// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfgrpo/policy.hpp"
#include "cfgrpo/rewards.hpp"

namespace cfgrpo::grpo {

struct GrpoConfig {
    int group_size = 8;
    double clip_eps = 0.2;
    double beta = 0.04;
    double learning_rate = 0.003;
    int steps = 200;
    double eps_norm = 1e-8;
    rewards::RewardWeights weights;
    uint64_t seed = 1;
    int batch_size = 16;                   // observations per step
    double counterfactual_fraction = 0.9;  // share of draws taken from the counterfactual pool
    std::string optimizer = "adam";        // "adam" or "sgd"
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    bool strict_order = false;

    void validate() const;
};

struct SftConfig {
    double learning_rate = 0.5;
    int epochs = 300;

    void validate() const;
};

struct GroupRollout {
    Observation observation;
    std::vector<ResponseChoice> choices;
    std::vector<rewards::StructuredResponse> responses;
    std::vector<double> old_log_probs;
    std::vector<rewards::RewardBreakdown> breakdowns;
    std::vector<double> rewards;
    std::vector<double> advantages;
};

struct ObjectiveResult {
    double value = 0.0;
    double surrogate = 0.0;
    double kl = 0.0;
    std::vector<double> gradient;
};

// One training observation with the context its rewards are scored against.
struct TrainingExample {
    Observation observation;
    rewards::RewardContext context;
    bool counterfactual = false;
};

struct SftExample {
    Observation observation;
    ResponseChoice gold;
};

struct GrpoLogRow {
    int step = 0;
    double mean_reward = 0, mean_r_fmt = 0, mean_r_cog = 0, mean_r_diag = 0, kl = 0, surrogate = 0;
};

std::vector<double> compute_advantages(const std::vector<double>& rewards, double eps_norm);
double clipped_surrogate(double ratio, double advantage, double clip_eps);

GroupRollout sample_group(const TemplatePolicy& policy, const Observation& obs, int group_size, uint64_t seed);
void score_group(GroupRollout& group, const rewards::RewardContext& ctx, const std::set<std::string>& vocabulary,
                 const GrpoConfig& cfg);

ObjectiveResult grpo_objective(const GroupRollout& group, const TemplatePolicy& policy, const TemplatePolicy& ref,
                               const GrpoConfig& cfg);

double sft_loss(const TemplatePolicy& policy, const std::vector<SftExample>& data);
std::vector<double> sft_gradient(const TemplatePolicy& policy, const std::vector<SftExample>& data);
// Returns the loss before each epoch plus the final loss (epochs+1 values).
std::vector<double> sft_train(TemplatePolicy& policy, const std::vector<SftExample>& data, const SftConfig& cfg);

std::vector<GrpoLogRow> grpo_train(TemplatePolicy& policy, const TemplatePolicy& ref,
                                   const std::vector<TrainingExample>& originals,
                                   const std::vector<TrainingExample>& counterfactuals,
                                   const std::set<std::string>& vocabulary, const GrpoConfig& cfg);

std::string training_log_csv(const std::vector<GrpoLogRow>& log);

} // namespace cfgrpo::grpo
