// SPDX-License-Identifier: Apache-2.0
#include "cfgrpo/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cfgrpo/error.hpp"
#include "cfgrpo/parallel.hpp"
#include "cfgrpo/rng.hpp"

namespace cfgrpo::grpo {

namespace {

constexpr uint64_t kTagDraw = 0xD0;
constexpr uint64_t kTagGroup = 0x6A;
constexpr size_t kChunks = 16;

void add_scaled(Logits& acc, const Logits& x, double a) {
    for (int s = 0; s < 3; ++s) {
        acc.include[s] += a * x.include[s];
        if (acc.slot[s].empty()) acc.slot[s].assign(x.slot[s].size(), 0.0);
        for (size_t i = 0; i < x.slot[s].size(); ++i) acc.slot[s][i] += a * x.slot[s][i];
    }
    if (acc.diagnosis.empty()) acc.diagnosis.assign(x.diagnosis.size(), 0.0);
    for (size_t i = 0; i < x.diagnosis.size(); ++i) acc.diagnosis[i] += a * x.diagnosis[i];
}

bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

} // namespace

void GrpoConfig::validate() const {
    if (group_size < 2) throw ConfigError("grpo.group_size must be >= 2");
    if (!(clip_eps > 0 && clip_eps < 1)) throw ConfigError("grpo.clip_eps must lie in (0,1)");
    if (!(beta >= 0)) throw ConfigError("grpo.beta must be nonnegative");
    if (!(learning_rate > 0)) throw ConfigError("grpo.learning_rate must be positive");
    if (steps < 0) throw ConfigError("grpo.steps must be nonnegative");
    if (!(eps_norm >= 0)) throw ConfigError("grpo.eps_norm must be nonnegative");
    if (batch_size < 1) throw ConfigError("grpo.batch_size must be positive");
    if (!(counterfactual_fraction >= 0 && counterfactual_fraction <= 1))
        throw ConfigError("grpo.counterfactual_fraction must lie in [0,1]");
    if (optimizer != "adam" && optimizer != "sgd") throw ConfigError("grpo.optimizer must be \"adam\" or \"sgd\"");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0))
        throw ConfigError("grpo: invalid adam parameters");
    weights.validate();
}

void SftConfig::validate() const {
    if (!(learning_rate > 0)) throw ConfigError("sft.learning_rate must be positive");
    if (epochs < 0) throw ConfigError("sft.epochs must be nonnegative");
}

std::vector<double> compute_advantages(const std::vector<double>& r, double eps_norm) {
    CFGRPO_REQUIRE(r.size() >= 2, "compute_advantages: group size must be >= 2");
    double mu = 0.0;
    for (double x : r) mu += x;
    mu /= static_cast<double>(r.size());
    double var = 0.0;
    for (double x : r) var += (x - mu) * (x - mu);
    const double sd = std::sqrt(var / static_cast<double>(r.size()));
    std::vector<double> a(r.size());
    const double denom = sd + eps_norm;
    for (size_t i = 0; i < r.size(); ++i) a[i] = denom > 0.0 ? (r[i] - mu) / denom : 0.0;
    return a;
}

double clipped_surrogate(double ratio, double advantage, double clip_eps) {
    return std::min(ratio * advantage, std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantage);
}

GroupRollout sample_group(const TemplatePolicy& policy, const Observation& obs, int group_size, uint64_t seed) {
    CFGRPO_REQUIRE(group_size >= 2, "sample_group: group size must be >= 2");
    Rng rng(seed);
    const auto d = distribution(policy, obs);
    GroupRollout g;
    g.observation = obs;
    for (int i = 0; i < group_size; ++i) {
        auto c = sample_choice(d, policy.grammar(), rng);
        g.old_log_probs.push_back(log_prob(d, policy.grammar(), c));
        g.responses.push_back(rewards::StructuredResponse::parse(render_choice(policy.grammar(), c)));
        g.choices.push_back(std::move(c));
    }
    return g;
}

void score_group(GroupRollout& g, const rewards::RewardContext& ctx, const std::set<std::string>& vocabulary,
                 const GrpoConfig& cfg) {
    g.breakdowns.clear();
    g.rewards.clear();
    for (const auto& r : g.responses) {
        g.breakdowns.push_back(
            rewards::score_response(r, ctx, vocabulary, cfg.weights, rewards::SectionSchema{}, cfg.strict_order));
        g.rewards.push_back(g.breakdowns.back().total);
    }
    g.advantages = compute_advantages(g.rewards, cfg.eps_norm);
}

ObjectiveResult grpo_objective(const GroupRollout& group, const TemplatePolicy& policy, const TemplatePolicy& ref,
                               const GrpoConfig& cfg) {
    const size_t n = group.choices.size();
    CFGRPO_REQUIRE(n >= 2 && group.old_log_probs.size() == n && group.advantages.size() == n,
                   "grpo_objective: group is missing log-probs or advantages");
    CFGRPO_REQUIRE(policy.params().size() == ref.params().size(), "grpo_objective: policy/reference shape mismatch");
    const auto& g = policy.grammar();
    const auto dp = distribution(policy, group.observation);
    const auto dq = distribution(ref, group.observation);

    ObjectiveResult out;
    Logits acc;
    for (size_t i = 0; i < n; ++i) {
        const double lp = log_prob(dp, g, group.choices[i]);
        const double ratio = std::exp(lp - group.old_log_probs[i]);
        if (!std::isfinite(ratio)) throw NumericalError("grpo_objective: non-finite importance ratio");
        const double a = group.advantages[i];
        const double unclipped = ratio * a;
        const double clipped = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * a;
        out.surrogate += std::min(unclipped, clipped);
        if (unclipped <= clipped && a != 0.0)
            add_scaled(acc, log_prob_logit_grad(dp, g, group.choices[i]), ratio * a / static_cast<double>(n));
    }
    out.surrogate /= static_cast<double>(n);
    out.kl = kl_divergence(dp, dq, g);
    out.value = out.surrogate - cfg.beta * out.kl;
    if (cfg.beta > 0.0) add_scaled(acc, kl_logit_grad(dp, dq, g), -cfg.beta);
    out.gradient.assign(policy.params().size(), 0.0);
    if (!acc.diagnosis.empty()) policy.backprop(group.observation, acc, 1.0, out.gradient);
    policy.zero_frozen(out.gradient);
    return out;
}

double sft_loss(const TemplatePolicy& policy, const std::vector<SftExample>& data) {
    CFGRPO_REQUIRE(!data.empty(), "sft: empty corpus");
    std::vector<double> part(kChunks, 0.0);
    parallel_for(kChunks, [&](size_t c) {
        for (size_t i = c; i < data.size(); i += kChunks) part[c] -= log_prob(policy, data[i].observation, data[i].gold);
    });
    double s = 0.0;
    for (double x : part) s += x;
    return s / static_cast<double>(data.size());
}

std::vector<double> sft_gradient(const TemplatePolicy& policy, const std::vector<SftExample>& data) {
    CFGRPO_REQUIRE(!data.empty(), "sft: empty corpus");
    std::vector<std::vector<double>> part(kChunks, std::vector<double>(policy.params().size(), 0.0));
    const double scale = -1.0 / static_cast<double>(data.size());
    parallel_for(kChunks, [&](size_t c) {
        for (size_t i = c; i < data.size(); i += kChunks) {
            const auto d = distribution(policy, data[i].observation);
            policy.backprop(data[i].observation, log_prob_logit_grad(d, policy.grammar(), data[i].gold), scale,
                            part[c]);
        }
    });
    std::vector<double> g(policy.params().size(), 0.0);
    for (const auto& p : part)
        for (size_t k = 0; k < g.size(); ++k) g[k] += p[k];
    policy.zero_frozen(g);
    return g;
}

std::vector<double> sft_train(TemplatePolicy& policy, const std::vector<SftExample>& data, const SftConfig& cfg) {
    cfg.validate();
    CFGRPO_REQUIRE(!data.empty(), "sft_train: empty corpus");
    std::vector<double> losses;
    for (int e = 0; e <= cfg.epochs; ++e) {
        const double loss = sft_loss(policy, data);
        if (!std::isfinite(loss)) throw NumericalError("sft_train: non-finite loss at epoch " + std::to_string(e));
        losses.push_back(loss);
        if (e == cfg.epochs) break;
        const auto g = sft_gradient(policy, data);
        auto& p = policy.params();
        for (size_t k = 0; k < p.size(); ++k) p[k] -= cfg.learning_rate * g[k];
    }
    return losses;
}

std::vector<GrpoLogRow> grpo_train(TemplatePolicy& policy, const TemplatePolicy& ref,
                                   const std::vector<TrainingExample>& originals,
                                   const std::vector<TrainingExample>& counterfactuals,
                                   const std::set<std::string>& vocabulary, const GrpoConfig& cfg) {
    cfg.validate();
    CFGRPO_REQUIRE(!originals.empty() || !counterfactuals.empty(), "grpo_train: no training observations");
    CFGRPO_REQUIRE(policy.params().size() == ref.params().size(), "grpo_train: policy/reference shape mismatch");
    const size_t np = policy.params().size();
    std::vector<double> m(np, 0.0), v(np, 0.0);
    std::vector<GrpoLogRow> log;
    const size_t bs = static_cast<size_t>(cfg.batch_size);

    for (int step = 1; step <= cfg.steps; ++step) {
        Rng draw = Rng::derive(cfg.seed, kTagDraw + static_cast<uint64_t>(step) * 7919ULL);
        std::vector<const TrainingExample*> batch;
        for (size_t b = 0; b < bs; ++b) {
            const bool use_cf = !counterfactuals.empty() &&
                                (originals.empty() || draw.bernoulli(cfg.counterfactual_fraction));
            const auto& pool = use_cf ? counterfactuals : originals;
            batch.push_back(&pool[draw.below(pool.size())]);
        }
        const TemplatePolicy old = policy;  // pi_old snapshot for this step
        std::vector<ObjectiveResult> res(bs);
        std::vector<GroupRollout> groups(bs);
        parallel_for(bs, [&](size_t b) {
            const uint64_t gseed = mix_seed(cfg.seed, kTagGroup + static_cast<uint64_t>(step) * 131071ULL + b);
            groups[b] = sample_group(old, batch[b]->observation, cfg.group_size, gseed);
            score_group(groups[b], batch[b]->context, vocabulary, cfg);
            res[b] = grpo_objective(groups[b], policy, ref, cfg);
        });

        GrpoLogRow row;
        row.step = step;
        std::vector<double> grad(np, 0.0);
        double count = 0.0;
        for (size_t b = 0; b < bs; ++b) {
            for (size_t k = 0; k < np; ++k) grad[k] += res[b].gradient[k] / static_cast<double>(bs);
            row.kl += res[b].kl / static_cast<double>(bs);
            row.surrogate += res[b].surrogate / static_cast<double>(bs);
            for (const auto& br : groups[b].breakdowns) {
                row.mean_reward += br.total;
                row.mean_r_fmt += br.r_fmt;
                row.mean_r_cog += br.r_cog;
                row.mean_r_diag += br.r_diag;
                count += 1.0;
            }
        }
        row.mean_reward /= count;
        row.mean_r_fmt /= count;
        row.mean_r_cog /= count;
        row.mean_r_diag /= count;
        log.push_back(row);

        auto& p = policy.params();
        if (cfg.optimizer == "adam") {
            const double c1 = 1.0 - std::pow(cfg.adam_beta1, step);
            const double c2 = 1.0 - std::pow(cfg.adam_beta2, step);
            for (size_t k = 0; k < np; ++k) {
                m[k] = cfg.adam_beta1 * m[k] + (1.0 - cfg.adam_beta1) * grad[k];
                v[k] = cfg.adam_beta2 * v[k] + (1.0 - cfg.adam_beta2) * grad[k] * grad[k];
                p[k] += cfg.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.adam_eps);
            }
        } else {
            for (size_t k = 0; k < np; ++k) p[k] += cfg.learning_rate * grad[k];
        }
        if (!all_finite(p)) throw NumericalError("grpo_train: parameters diverged at step " + std::to_string(step));
    }
    return log;
}

std::string training_log_csv(const std::vector<GrpoLogRow>& log) {
    std::ostringstream os;
    os.precision(17);
    os << "step,mean_reward,mean_r_fmt,mean_r_cog,mean_r_diag,kl,surrogate\n";
    for (const auto& r : log)
        os << r.step << ',' << r.mean_reward << ',' << r.mean_r_fmt << ',' << r.mean_r_cog << ',' << r.mean_r_diag
           << ',' << r.kl << ',' << r.surrogate << '\n';
    return os.str();
}

} // namespace cfgrpo::grpo
