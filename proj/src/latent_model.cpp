// SPDX-License-Identifier: Apache-2.0
#include "cfgrpo/latent_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cfgrpo/error.hpp"
#include "cfgrpo/rng.hpp"

namespace cfgrpo::latent {

namespace {

constexpr uint64_t kTagMixing = 0xA11;
constexpr uint64_t kTagCausal = 0xC0;
constexpr uint64_t kTagSpurious = 0xE0;
constexpr uint64_t kTagResample = 0xE1;
constexpr uint64_t kTagShuffle = 0x5F;

double sigmoid(double t) {
    if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

double norm2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double logit(const DiagnosticModel& m, const std::vector<double>& phi) {
    const size_t dc = m.w_c.size();
    double t = m.bias;
    for (size_t i = 0; i < dc; ++i) t += m.w_c[i] * phi[i];
    for (size_t i = 0; i < m.w_e.size(); ++i) t += m.w_e[i] * phi[dc + i];
    return t;
}

void check_model(const DiagnosticModel& m, const LatentConfig& cfg) {
    CFGRPO_REQUIRE(m.w_c.size() == static_cast<size_t>(cfg.d_c) && m.w_e.size() == static_cast<size_t>(cfg.d_e),
                   "diagnostic model dimensions do not match latent config");
}

Gradient zero_gradient(const LatentConfig& cfg) {
    Gradient g;
    g.w_c.assign(cfg.d_c, 0.0);
    g.w_e.assign(cfg.d_e, 0.0);
    return g;
}

// z_e whose sign summary equals s exactly
std::vector<double> draw_spurious(Rng& rng, int y, double rho, int d_e) {
    const int s = rng.bernoulli(rho) ? y : (rng.bernoulli(0.5) ? 1 : 0);
    std::vector<double> w(d_e);
    double mean = 0.0;
    for (auto& x : w) {
        x = rng.normal();
        mean += x;
    }
    const double sg = mean >= 0.0 ? 1.0 : -1.0;
    const double target = s == 1 ? 1.0 : -1.0;
    for (auto& x : w) x *= sg * target;
    return w;
}

} // namespace

void LatentConfig::validate() const {
    if (d_c <= 0 || d_e <= 0) throw ConfigError("latent: d_c and d_e must be positive");
    if (!(kappa_c > 0) || !(kappa_e > 0)) throw ConfigError("latent: kappa_c and kappa_e must be positive");
    if (!(rho_e >= 0.0 && rho_e <= 1.0)) throw ConfigError("latent: rho_e must lie in [0,1]");
    if (!(noise_std >= 0.0)) throw ConfigError("latent: noise_std must be nonnegative");
    if (!(causal_gain > 0)) throw ConfigError("latent: causal_gain must be positive");
    if (!std::isfinite(label_offset)) throw ConfigError("latent: label_offset must be finite");
}

void TrainConfig::validate() const {
    if (!(eta > 0)) throw ConfigError("latent_train: eta must be positive");
    if (steps < 0) throw ConfigError("latent_train: steps must be nonnegative");
    if (!(lambda_cf >= 0)) throw ConfigError("latent_train: lambda_cf must be nonnegative");
    if (batch_size < 0) throw ConfigError("latent_train: batch_size must be nonnegative");
}

DiagnosticModel DiagnosticModel::zeros(const LatentConfig& cfg) {
    DiagnosticModel m;
    m.w_c.assign(cfg.d_c, 0.0);
    m.w_e.assign(cfg.d_e, 0.0);
    return m;
}

double Gradient::inf_norm() const {
    double r = std::abs(bias);
    for (double x : w_c) r = std::max(r, std::abs(x));
    for (double x : w_e) r = std::max(r, std::abs(x));
    return r;
}

Featurizer::Featurizer(const LatentConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int d = cfg.d_c;
    a_.assign(static_cast<size_t>(d) * d, 0.0);
    if (cfg.causal_map == CausalMap::Identity) {
        for (int i = 0; i < d; ++i) a_[i * d + i] = 1.0;
        return;
    }
    // random orthogonal matrix by Gram-Schmidt on Gaussian columns
    Rng rng = Rng::derive(cfg.seed, kTagMixing);
    std::vector<std::vector<double>> cols(d, std::vector<double>(d));
    for (int j = 0; j < d; ++j)
        for (int i = 0; i < d; ++i) cols[j][i] = rng.normal();
    for (int j = 0; j < d; ++j) {
        for (int k = 0; k < j; ++k) {
            double dot = 0.0;
            for (int i = 0; i < d; ++i) dot += cols[j][i] * cols[k][i];
            for (int i = 0; i < d; ++i) cols[j][i] -= dot * cols[k][i];
        }
        const double n = norm2(cols[j]);
        for (int i = 0; i < d; ++i) cols[j][i] /= n;
    }
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) a_[i * d + j] = cfg.causal_gain * cols[j][i];
}

std::vector<double> Featurizer::causal_block(const std::vector<double>& z_c) const {
    const int d = cfg_.d_c;
    std::vector<double> out(d);
    for (int i = 0; i < d; ++i) {
        double t = 0.0;
        for (int j = 0; j < d; ++j) t += a_[i * d + j] * z_c[j];
        out[i] = cfg_.causal_map == CausalMap::Tanh ? std::tanh(t) : t;
    }
    return out;
}

double Featurizer::causal_score(const std::vector<double>& z_c) const {
    const auto g = causal_block(z_c);
    return std::accumulate(g.begin(), g.end(), 0.0) / std::sqrt(static_cast<double>(cfg_.d_c)) -
           cfg_.label_offset;
}

std::vector<double> Featurizer::features(const LatentSample& s) const {
    CFGRPO_REQUIRE(s.z_c.size() == static_cast<size_t>(cfg_.d_c) && s.z_e.size() == static_cast<size_t>(cfg_.d_e),
                   "featurize: latent dimensions do not match config");
    std::vector<double> phi = causal_block(s.z_c);
    for (double& x : phi) x *= cfg_.kappa_c;
    for (double z : s.z_e) phi.push_back(cfg_.kappa_e * z);
    return phi;
}

std::vector<double> Featurizer::counterfactual_features(const LatentSample& s) const {
    LatentSample cf = s;
    std::fill(cf.z_c.begin(), cf.z_c.end(), 0.0);
    return features(cf);
}

std::vector<double> Featurizer::causal_jacobian(const std::vector<double>& z_c) const {
    const int d = cfg_.d_c;
    std::vector<double> jac(static_cast<size_t>(d) * d);
    for (int i = 0; i < d; ++i) {
        double t = 0.0;
        for (int j = 0; j < d; ++j) t += a_[i * d + j] * z_c[j];
        const double dg = cfg_.causal_map == CausalMap::Tanh ? 1.0 - std::tanh(t) * std::tanh(t) : 1.0;
        for (int j = 0; j < d; ++j) jac[i * d + j] = cfg_.kappa_c * dg * a_[i * d + j];
    }
    return jac;
}

std::vector<LatentSample> generate_samples(const LatentConfig& cfg, int n) {
    cfg.validate();
    if (n < 1) throw ContractViolation("generate_samples: n must be >= 1");
    Featurizer fz(cfg);
    Rng rc = Rng::derive(cfg.seed, kTagCausal);
    Rng re = Rng::derive(cfg.seed, kTagSpurious);
    std::vector<LatentSample> out(n);
    for (auto& s : out) {
        s.z_c.resize(cfg.d_c);
        for (auto& z : s.z_c) z = rc.normal();
        const double score = fz.causal_score(s.z_c) + cfg.noise_std * rc.normal();
        s.y = score > 0.0 ? 1 : 0;
        s.z_e = draw_spurious(re, s.y, cfg.rho_e, cfg.d_e);
    }
    return out;
}

std::vector<double> featurize(const LatentSample& s, const LatentConfig& cfg) { return Featurizer(cfg).features(s); }

double predict(const DiagnosticModel& m, const std::vector<double>& features) {
    CFGRPO_REQUIRE(features.size() == m.w_c.size() + m.w_e.size(), "predict: feature length mismatch");
    return sigmoid(logit(m, features));
}

double sft_loss(const DiagnosticModel& m, const std::vector<LatentSample>& batch, const Featurizer& fz) {
    CFGRPO_REQUIRE(!batch.empty(), "sft_loss: empty batch");
    double loss = 0.0;
    for (const auto& s : batch) {
        const double t = logit(m, fz.features(s));
        // -[y log s(t) + (1-y) log(1-s(t))] = softplus(t) - y t
        const double sp = t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
        loss += sp - s.y * t;
    }
    return loss / static_cast<double>(batch.size());
}

Gradient sft_gradient(const DiagnosticModel& m, const std::vector<LatentSample>& batch, const Featurizer& fz) {
    CFGRPO_REQUIRE(!batch.empty(), "sft_gradient: empty batch");
    check_model(m, fz.config());
    Gradient g = zero_gradient(fz.config());
    const size_t dc = m.w_c.size();
    for (const auto& s : batch) {
        const auto phi = fz.features(s);
        const double r = predict(m, phi) - s.y;
        for (size_t i = 0; i < dc; ++i) g.w_c[i] += r * phi[i];
        for (size_t i = 0; i < m.w_e.size(); ++i) g.w_e[i] += r * phi[dc + i];
        g.bias += r;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& x : g.w_c) x *= inv;
    for (auto& x : g.w_e) x *= inv;
    g.bias *= inv;
    return g;
}

Gradient sft_gradient(const DiagnosticModel& m, const std::vector<LatentSample>& batch, const LatentConfig& cfg) {
    return sft_gradient(m, batch, Featurizer(cfg));
}

PenaltyResult cf_penalty(const DiagnosticModel& m, const std::vector<LatentSample>& batch, const Featurizer& fz) {
    CFGRPO_REQUIRE(!batch.empty(), "cf_penalty: empty batch");
    check_model(m, fz.config());
    PenaltyResult out;
    out.gradient = zero_gradient(fz.config());
    const size_t dc = m.w_c.size();
    for (const auto& s : batch) {
        const auto phi = fz.counterfactual_features(s);
        const double f = predict(m, phi);
        out.value += f * f;
        const double c = 2.0 * f * f * (1.0 - f);
        for (size_t i = 0; i < dc; ++i) out.gradient.w_c[i] += c * phi[i];
        for (size_t i = 0; i < m.w_e.size(); ++i) out.gradient.w_e[i] += c * phi[dc + i];
        out.gradient.bias += c;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    out.value *= inv;
    for (auto& x : out.gradient.w_c) x *= inv;
    for (auto& x : out.gradient.w_e) x *= inv;
    out.gradient.bias *= inv;
    return out;
}

PenaltyResult cf_penalty(const DiagnosticModel& m, const std::vector<LatentSample>& batch, const LatentConfig& cfg) {
    return cf_penalty(m, batch, Featurizer(cfg));
}

double sensitivity(const DiagnosticModel& m, const Featurizer& fz, Factor factor,
                   const std::vector<LatentSample>& probe) {
    CFGRPO_REQUIRE(!probe.empty(), "sensitivity: empty probe set");
    check_model(m, fz.config());
    const auto& cfg = fz.config();
    double total = 0.0;
    for (const auto& s : probe) {
        const double f = predict(m, fz.features(s));
        const double df = f * (1.0 - f);
        if (factor == Factor::Spurious) {
            total += df * cfg.kappa_e * norm2(m.w_e);
        } else {
            const auto jac = fz.causal_jacobian(s.z_c);
            const int d = cfg.d_c;
            double sq = 0.0;
            for (int j = 0; j < d; ++j) {
                double gj = 0.0;
                for (int i = 0; i < d; ++i) gj += m.w_c[i] * jac[i * d + j];
                sq += gj * gj;
            }
            total += df * std::sqrt(sq);
        }
    }
    return total / static_cast<double>(probe.size());
}

double sensitivity(const DiagnosticModel& m, const LatentConfig& cfg, Factor factor,
                   const std::vector<LatentSample>& probe) {
    return sensitivity(m, Featurizer(cfg), factor, probe);
}

SensitivityReport sensitivity_report(const DiagnosticModel& m, const Featurizer& fz,
                                     const std::vector<LatentSample>& probe) {
    SensitivityReport r;
    r.s_c = sensitivity(m, fz, Factor::Causal, probe);
    r.s_e = sensitivity(m, fz, Factor::Spurious, probe);
    r.ratio = r.s_e / std::max(r.s_c, 1e-300);
    return r;
}

namespace {

// Features and Jacobians of a fixed data set, computed once per training run.
struct DataCache {
    std::vector<std::vector<double>> phi, phi_cf, jac;
    std::vector<int> y;

    DataCache(const std::vector<LatentSample>& data, const Featurizer& fz) {
        for (const auto& s : data) {
            phi.push_back(fz.features(s));
            phi_cf.push_back(fz.counterfactual_features(s));
            jac.push_back(fz.causal_jacobian(s.z_c));
            y.push_back(s.y);
        }
    }
};

struct StepStats {
    double loss = 0, penalty = 0, s_c = 0, s_e = 0;
};

StepStats evaluate_cache(const DiagnosticModel& m, const DataCache& c, const LatentConfig& cfg) {
    StepStats st;
    const int d = cfg.d_c;
    const double we = norm2(m.w_e);
    for (size_t k = 0; k < c.y.size(); ++k) {
        const double t = logit(m, c.phi[k]);
        const double sp = t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
        st.loss += sp - c.y[k] * t;
        const double f = sigmoid(t);
        const double df = f * (1.0 - f);
        st.s_e += df * cfg.kappa_e * we;
        double sq = 0.0;
        for (int j = 0; j < d; ++j) {
            double gj = 0.0;
            for (int i = 0; i < d; ++i) gj += m.w_c[i] * c.jac[k][i * d + j];
            sq += gj * gj;
        }
        st.s_c += df * std::sqrt(sq);
        const double fc = sigmoid(logit(m, c.phi_cf[k]));
        st.penalty += fc * fc;
    }
    const double inv = 1.0 / static_cast<double>(c.y.size());
    st.loss *= inv;
    st.penalty *= inv;
    st.s_c *= inv;
    st.s_e *= inv;
    return st;
}

} // namespace

std::pair<DiagnosticModel, TrainTrajectory> train(DiagnosticModel model, const std::vector<LatentSample>& data,
                                                  const TrainConfig& cfg, const LatentConfig& latent_cfg) {
    cfg.validate();
    CFGRPO_REQUIRE(!data.empty(), "train: empty data");
    check_model(model, latent_cfg);
    const Featurizer fz(latent_cfg);
    const DataCache cache(data, fz);

    const size_t n = data.size();
    const bool full = cfg.batch_size == 0 || static_cast<size_t>(cfg.batch_size) >= n;
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (!full) {
        Rng rng = Rng::derive(cfg.seed, kTagShuffle);
        for (size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    }

    auto record = [&](int step) {
        const StepStats st = evaluate_cache(model, cache, latent_cfg);
        if (!std::isfinite(st.loss) || !std::isfinite(st.penalty))
            throw NumericalError("latent train: non-finite loss at step " + std::to_string(step));
        TrajectoryRecord r;
        r.step = step;
        r.norm_wc = norm2(model.w_c);
        r.norm_we = norm2(model.w_e);
        r.s_c = st.s_c;
        r.s_e = st.s_e;
        r.sft_loss = st.loss;
        r.cf_penalty = st.penalty;
        return r;
    };

    const size_t dc = static_cast<size_t>(latent_cfg.d_c);
    const size_t dim = dc + static_cast<size_t>(latent_cfg.d_e);
    std::vector<double> grad(dim + 1);
    TrainTrajectory traj;
    traj.push_back(record(0));
    size_t cursor = 0;
    for (int step = 1; step <= cfg.steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        const size_t bs = full ? n : static_cast<size_t>(cfg.batch_size);
        for (size_t b = 0; b < bs; ++b) {
            size_t k = b;
            if (!full) {
                k = order[cursor];
                cursor = (cursor + 1) % n;
            }
            const double r = sigmoid(logit(model, cache.phi[k])) - cache.y[k];
            for (size_t i = 0; i < dim; ++i) grad[i] += r * cache.phi[k][i];
            grad[dim] += r;
            if (cfg.lambda_cf > 0.0) {
                const double f = sigmoid(logit(model, cache.phi_cf[k]));
                const double c = cfg.lambda_cf * 2.0 * f * f * (1.0 - f);
                for (size_t i = 0; i < dim; ++i) grad[i] += c * cache.phi_cf[k][i];
                grad[dim] += c;
            }
        }
        double gmax = 0.0;
        for (auto& x : grad) {
            x /= static_cast<double>(bs);
            gmax = std::max(gmax, std::abs(x));
        }
        if (!std::isfinite(gmax)) throw NumericalError("latent train: non-finite gradient at step " + std::to_string(step));
        if (full && gmax < cfg.grad_tol) break;
        for (size_t i = 0; i < dc; ++i) model.w_c[i] -= cfg.eta * grad[i];
        for (size_t i = dc; i < dim; ++i) model.w_e[i - dc] -= cfg.eta * grad[i];
        model.bias -= cfg.eta * grad[dim];
        traj.push_back(record(step));
    }
    return {model, traj};
}

double causal_accuracy(const DiagnosticModel& m, const std::vector<LatentSample>& data, const LatentConfig& cfg) {
    CFGRPO_REQUIRE(!data.empty(), "causal_accuracy: empty data");
    const Featurizer fz(cfg);
    Rng re = Rng::derive(cfg.seed, kTagResample);
    size_t correct = 0;
    for (const auto& s : data) {
        LatentSample r = s;
        r.z_e = draw_spurious(re, s.y, 0.0, cfg.d_e);
        const int pred = predict(m, fz.features(r)) > 0.5 ? 1 : 0;
        correct += pred == s.y ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

double mean_counterfactual_prediction(const DiagnosticModel& m, const std::vector<LatentSample>& data,
                                      const Featurizer& fz) {
    CFGRPO_REQUIRE(!data.empty(), "empty data");
    double s = 0.0;
    for (const auto& x : data) s += predict(m, fz.counterfactual_features(x));
    return s / static_cast<double>(data.size());
}

std::string trajectory_csv(const TrainTrajectory& t) {
    std::ostringstream os;
    os.precision(17);
    os << "step,norm_wc,norm_we,s_c,s_e,sft_loss,cf_penalty\n";
    for (const auto& r : t)
        os << r.step << ',' << r.norm_wc << ',' << r.norm_we << ',' << r.s_c << ',' << r.s_e << ',' << r.sft_loss
           << ',' << r.cf_penalty << '\n';
    return os.str();
}

} // namespace cfgrpo::latent
