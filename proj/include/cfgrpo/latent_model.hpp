// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cfgrpo::latent {

enum class CausalMap { Tanh, Identity };

struct LatentConfig {
    int d_c = 2;
    int d_e = 2;
    double kappa_c = 1.0;
    double kappa_e = 4.0;
    double rho_e = 0.95;
    double noise_std = 1.5;
    uint64_t seed = 7;
    CausalMap causal_map = CausalMap::Tanh;
    double causal_gain = 2.0;   // scale of the mixing matrix inside tanh
    double label_offset = 0.8;  // subtracted from the causal score before thresholding

    void validate() const;
};

struct LatentSample {
    std::vector<double> z_c;
    std::vector<double> z_e;
    int y = 0;
};

struct DiagnosticModel {
    std::vector<double> w_c;
    std::vector<double> w_e;
    double bias = 0.0;

    static DiagnosticModel zeros(const LatentConfig& cfg);
    bool operator==(const DiagnosticModel&) const = default;
};

struct TrainConfig {
    double eta = 0.1;
    int steps = 20000;
    double lambda_cf = 0.0;
    int batch_size = 0;  // 0 or >= n means full batch
    uint64_t seed = 7;
    double grad_tol = 1e-4;  // stop once the gradient inf-norm falls below this

    void validate() const;
};

struct SensitivityReport {
    double s_c = 0.0;
    double s_e = 0.0;
    double ratio = 0.0;
};

struct TrajectoryRecord {
    int step = 0;
    double norm_wc = 0.0;
    double norm_we = 0.0;
    double s_c = 0.0;
    double s_e = 0.0;
    double sft_loss = 0.0;
    double cf_penalty = 0.0;

    bool operator==(const TrajectoryRecord&) const = default;
};

using TrainTrajectory = std::vector<TrajectoryRecord>;

enum class Factor { Causal, Spurious };

// Fixed map z -> phi(z). Holds the mixing matrix derived from the config seed.
class Featurizer {
  public:
    explicit Featurizer(const LatentConfig& cfg);

    std::vector<double> features(const LatentSample& s) const;
    // phi with the causal latent zeroed (the counterfactual input)
    std::vector<double> counterfactual_features(const LatentSample& s) const;
    // d phi_c / d z_c, row-major d_c x d_c
    std::vector<double> causal_jacobian(const std::vector<double>& z_c) const;
    double causal_score(const std::vector<double>& z_c) const;

    const LatentConfig& config() const { return cfg_; }
    const std::vector<double>& mixing() const { return a_; }

  private:
    std::vector<double> causal_block(const std::vector<double>& z_c) const;

    LatentConfig cfg_;
    std::vector<double> a_;  // d_c x d_c
};

struct Gradient {
    std::vector<double> w_c;
    std::vector<double> w_e;
    double bias = 0.0;

    double inf_norm() const;
};

struct PenaltyResult {
    double value = 0.0;
    Gradient gradient;
};

std::vector<LatentSample> generate_samples(const LatentConfig& cfg, int n);
std::vector<double> featurize(const LatentSample& s, const LatentConfig& cfg);
double predict(const DiagnosticModel& m, const std::vector<double>& features);
double sft_loss(const DiagnosticModel& m, const std::vector<LatentSample>& batch, const Featurizer& fz);
Gradient sft_gradient(const DiagnosticModel& m, const std::vector<LatentSample>& batch, const LatentConfig& cfg);
Gradient sft_gradient(const DiagnosticModel& m, const std::vector<LatentSample>& batch, const Featurizer& fz);
PenaltyResult cf_penalty(const DiagnosticModel& m, const std::vector<LatentSample>& batch, const LatentConfig& cfg);
PenaltyResult cf_penalty(const DiagnosticModel& m, const std::vector<LatentSample>& batch, const Featurizer& fz);
std::pair<DiagnosticModel, TrainTrajectory> train(DiagnosticModel model, const std::vector<LatentSample>& data,
                                                  const TrainConfig& cfg, const LatentConfig& latent_cfg);
double sensitivity(const DiagnosticModel& m, const LatentConfig& cfg, Factor factor,
                   const std::vector<LatentSample>& probe);
double sensitivity(const DiagnosticModel& m, const Featurizer& fz, Factor factor,
                   const std::vector<LatentSample>& probe);
SensitivityReport sensitivity_report(const DiagnosticModel& m, const Featurizer& fz,
                                     const std::vector<LatentSample>& probe);
double causal_accuracy(const DiagnosticModel& m, const std::vector<LatentSample>& data, const LatentConfig& cfg);
// mean f on the counterfactual inputs
double mean_counterfactual_prediction(const DiagnosticModel& m, const std::vector<LatentSample>& data,
                                      const Featurizer& fz);

std::string trajectory_csv(const TrainTrajectory& t);

} // namespace cfgrpo::latent
