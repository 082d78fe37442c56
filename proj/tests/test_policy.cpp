// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <map>

#include "doctest.h"

#include "cfgrpo/error.hpp"
#include "cfgrpo/grpo.hpp"
#include "cfgrpo/policy.hpp"
#include "cfgrpo/rng.hpp"

using namespace cfgrpo;
using namespace cfgrpo::grpo;

namespace {

// 2 keywords per section, one slot, two diagnoses; one class word per section is tied to class 0.
std::shared_ptr<const Grammar> toy_grammar(int slots = 1) {
    auto g = std::make_shared<Grammar>();
    g->vocab = {std::vector<std::string>{"alpha", "beta"}, {"gamma", "delta"}, {"eps", "zeta"}};
    g->slots = slots;
    g->n_classes = 1;
    g->word_class = {std::vector<int>{-1, -1}, {0, -1}, {0, -1}};
    g->diagnoses = {{"normal"}, {"lesion"}};
    g->diagnosis_classes = {{}, {0}};
    g->validate();
    return g;
}

Observation random_obs(int dim, Rng& rng) {
    Observation o(dim);
    for (auto& x : o) x = rng.normal();
    return o;
}

TemplatePolicy random_policy(const std::shared_ptr<const Grammar>& g, int dim, uint64_t seed, double scale = 0.7) {
    TemplatePolicy p(g, dim);
    p.init_random(seed, scale);
    return p;
}

ResponseChoice random_choice(const TemplatePolicy& p, const Observation& o, uint64_t seed) {
    Rng rng(seed);
    return sample_choice(distribution(p, o), p.grammar(), rng);
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

// central differences over every trainable parameter
template <class F>
double max_fd_error(TemplatePolicy& p, const std::vector<double>& grad, F f, double h = 1e-6) {
    double worst = 0.0;
    for (size_t k = 0; k < p.params().size(); ++k) {
        if (p.frozen()[k]) {
            CHECK(grad[k] == 0.0);
            continue;
        }
        const double keep = p.params()[k];
        p.params()[k] = keep + h;
        const double up = f(p);
        p.params()[k] = keep - h;
        const double dn = f(p);
        p.params()[k] = keep;
        worst = std::max(worst, rel_err((up - dn) / (2 * h), grad[k]));
    }
    return worst;
}

} // namespace

TEST_CASE("toy grammar enumeration sums to one") {
    for (int slots : {1, 2}) {
        const auto g = toy_grammar(slots);
        Rng rng(5);
        for (int t = 0; t < 10; ++t) {
            const auto p = random_policy(g, 3, 100 + t, 1.5);
            const auto o = random_obs(3, rng);
            const auto d = distribution(p, o);
            double total = 0.0;
            for (const auto& c : enumerate_choices(*g)) total += std::exp(log_prob(d, *g, c));
            CHECK(std::abs(total - 1.0) < 1e-9);
        }
    }
    CHECK(enumerate_choices(*toy_grammar()).size() == 3 * 3 * 3 * 2);
}

TEST_CASE("log prob basics") {
    const auto g = toy_grammar();
    TemplatePolicy zero(g, 2);
    const Observation o{0.3, -0.2};
    ResponseChoice c;
    c.include = {0, 0, 0};
    c.words = {-1, -1, -1};
    c.diagnosis = 0;
    // all logits zero: three fair exclusions and a fair diagnosis
    CHECK(log_prob(zero, o, c) == doctest::Approx(4 * std::log(0.5)).epsilon(1e-14));
    Rng rng(1);
    const auto p = random_policy(g, 2, 9);
    for (int i = 0; i < 100; ++i) {
        const double lp = log_prob(p, o, random_choice(p, o, i));
        CHECK(std::isfinite(lp));
        CHECK(lp <= 0.0);
    }
}

TEST_CASE("render and parse round trip") {
    const auto g = toy_grammar(2);
    const auto p = random_policy(g, 2, 3, 2.0);
    for (int i = 0; i < 50; ++i) {
        const auto c = random_choice(p, {0.1, 0.9}, i);
        const auto text = render_choice(*g, c);
        CHECK(parse_choice(*g, rewards::StructuredResponse::parse(text)) == c);
        CHECK(log_prob(p, {0.1, 0.9}, rewards::StructuredResponse::parse(text)) ==
              doctest::Approx(log_prob(p, {0.1, 0.9}, c)));
    }
    CHECK_THROWS_AS(parse_choice(*g, rewards::StructuredResponse::parse("free text")), ContractViolation);
}

TEST_CASE("negative log likelihood gradient matches finite differences") {
    const auto g = toy_grammar(2);
    Rng rng(11);
    for (int t = 0; t < 60; ++t) {
        auto p = random_policy(g, 3, 1000 + t);
        const auto o = random_obs(3, rng);
        const auto c = random_choice(p, o, 77 + t);
        std::vector<double> grad(p.params().size(), 0.0);
        p.backprop(o, log_prob_logit_grad(distribution(p, o), *g, c), -1.0, grad);
        p.zero_frozen(grad);
        CHECK(max_fd_error(p, grad, [&](const TemplatePolicy& q) { return -log_prob(q, o, c); }) < 1e-5);
    }
}

TEST_CASE("sft gradient matches finite differences") {
    const auto g = toy_grammar();
    Rng rng(3);
    for (int t = 0; t < 5; ++t) {
        auto p = random_policy(g, 2, 50 + t);
        std::vector<SftExample> data;
        for (int i = 0; i < 8; ++i) {
            const auto o = random_obs(2, rng);
            data.push_back({o, random_choice(p, o, 500 + i)});
        }
        CHECK(max_fd_error(p, sft_gradient(p, data), [&](const TemplatePolicy& q) { return sft_loss(q, data); }) <
              1e-5);
    }
}

TEST_CASE("kl divergence") {
    const auto g = toy_grammar(2);
    Rng rng(21);
    SUBCASE("bernoulli closed form") {
        // only the first inclusion logit differs: p = 0.9 against 0.5
        TemplatePolicy p(g, 1), q(g, 1);
        const auto& b = p.block("inclusion");
        p.params()[b.offset + 1] = std::log(9.0);  // bias of row 0
        const double expect = 0.9 * std::log(1.8) + 0.1 * std::log(0.2);
        // the slot distributions are identical, so the inclusion term is the only contribution
        CHECK(kl_divergence(p, q, {0.0}) == doctest::Approx(expect).epsilon(1e-12));
        CHECK(expect == doctest::Approx(0.3681).epsilon(1e-3));
    }
    SUBCASE("identity, sign, and enumeration oracle") {
        for (int t = 0; t < 20; ++t) {
            const auto p = random_policy(g, 2, 300 + t), q = random_policy(g, 2, 600 + t);
            const auto o = random_obs(2, rng);
            CHECK(kl_divergence(p, p, o) == 0.0);
            const auto dp = distribution(p, o), dq = distribution(q, o);
            double exact = 0.0;
            for (const auto& c : enumerate_choices(*g)) {
                const double lp = log_prob(dp, *g, c);
                exact += std::exp(lp) * (lp - log_prob(dq, *g, c));
            }
            const double k = kl_divergence(dp, dq, *g);
            CHECK(k > 0.0);
            CHECK(std::abs(k - exact) < 1e-10);
        }
    }
    SUBCASE("monte carlo agreement") {
        const auto p = random_policy(g, 2, 1), q = random_policy(g, 2, 2);
        const Observation o{0.5, -1.0};
        const auto dp = distribution(p, o), dq = distribution(q, o);
        Rng s(4);
        const int n = 100000;
        double m = 0, m2 = 0;
        for (int i = 0; i < n; ++i) {
            const auto c = sample_choice(dp, *g, s);
            const double x = log_prob(dp, *g, c) - log_prob(dq, *g, c);
            m += x;
            m2 += x * x;
        }
        m /= n;
        const double se = std::sqrt((m2 / n - m * m) / n);
        CHECK(std::abs(m - kl_divergence(dp, dq, *g)) < 3 * se);
    }
    SUBCASE("gradient matches finite differences") {
        for (int t = 0; t < 60; ++t) {
            auto p = random_policy(g, 2, 900 + t);
            const auto q = random_policy(g, 2, 1900 + t);
            const auto o = random_obs(2, rng);
            std::vector<double> grad(p.params().size(), 0.0);
            p.backprop(o, kl_logit_grad(distribution(p, o), distribution(q, o), *g), 1.0, grad);
            p.zero_frozen(grad);
            CHECK(max_fd_error(p, grad, [&](const TemplatePolicy& x) { return kl_divergence(x, q, o); }) < 1e-5);
        }
    }
}

TEST_CASE("advantages") {
    for (double a : compute_advantages({2, 2, 2, 2}, 1e-8)) CHECK(a == 0.0);
    for (double a : compute_advantages({3, 3}, 0.0)) CHECK(a == 0.0);
    const auto a2 = compute_advantages({0, 4}, 0.0);
    CHECK(a2[0] == -1.0);
    CHECK(a2[1] == 1.0);
    const auto a4 = compute_advantages({0, 1, 2, 3}, 1e-8);
    const double expect[] = {-1.3416, -0.4472, 0.4472, 1.3416};
    for (int i = 0; i < 4; ++i) CHECK(std::abs(a4[i] - expect[i]) < 1e-4);
    CHECK_THROWS_AS(compute_advantages({1.0}, 0.0), ContractViolation);

    Rng rng(8);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> r(8);
        for (auto& x : r) x = 4 * rng.uniform();
        const auto a = compute_advantages(r, 0.0);
        double m = 0, v = 0;
        for (double x : a) m += x;
        for (double x : a) v += x * x;
        CHECK(std::abs(m) < 1e-9);
        CHECK(std::abs(v / 8 - 1.0) < 1e-6);
    }
}

TEST_CASE("clipped surrogate algebra") {
    CHECK(clipped_surrogate(1.5, 1.0, 0.2) == doctest::Approx(1.2));
    CHECK(clipped_surrogate(0.5, 1.0, 0.2) == doctest::Approx(0.5));
    CHECK(clipped_surrogate(0.5, -1.0, 0.2) == doctest::Approx(-0.8));
    CHECK(clipped_surrogate(1.5, -1.0, 0.2) == doctest::Approx(-1.5));
    for (double eps : {0.1, 0.2, 0.5})
        for (double r = 0.0; r <= 3.0; r += 0.05)
            for (double a : {-2.0, -0.3, 0.0, 0.7, 1.9}) {
                const double s = clipped_surrogate(r, a, eps);
                CHECK(s == std::min(r * a, std::clamp(r, 1 - eps, 1 + eps) * a));
                if (a > 0) CHECK(s <= (1 + eps) * a + 1e-15);
                CHECK(s <= r * a + 1e-15);
            }
}

TEST_CASE("sampling") {
    const auto g = toy_grammar();
    const auto p = random_policy(g, 2, 4);
    const Observation o{0.2, 0.4};
    SUBCASE("same seed, same rollout") {
        const auto a = sample_group(p, o, 8, 99), b = sample_group(p, o, 8, 99);
        CHECK(a.choices == b.choices);
        CHECK(a.old_log_probs == b.old_log_probs);
    }
    SUBCASE("saturated policy gives identical samples") {
        auto s = p;
        for (auto& x : s.params()) x *= 1e4;
        const auto grp = sample_group(s, o, 8, 5);
        for (const auto& c : grp.choices) CHECK(c == grp.choices[0]);
    }
    SUBCASE("uniform slot logits give uniform words") {
        auto big = std::make_shared<Grammar>(*g);
        big->vocab[0] = {"a", "b", "c", "d", "e"};
        big->word_class[0].assign(5, -1);
        TemplatePolicy u(big, 1);
        u.params()[u.block("inclusion").offset + 1] = 50.0;  // always include section 0
        const auto d = distribution(u, {0.0});
        Rng rng(123);
        const int n = 10000;
        std::vector<int> counts(5, 0);
        for (int i = 0; i < n; ++i) ++counts[sample_choice(d, *big, rng).words[0]];
        double chi2 = 0;
        for (int c : counts) chi2 += (c - n / 5.0) * (c - n / 5.0) / (n / 5.0);
        CHECK(chi2 < 18.47);  // 99.9% quantile, 4 dof
    }
}

TEST_CASE("grpo objective") {
    const auto g = toy_grammar(2);
    GrpoConfig cfg;
    const rewards::RewardContext ctx{{{{"alpha", "alpha", "beta"}, {"gamma", "delta", "gamma"}, {"eps", "zeta", "eps"}}},
                                     {"lesion"}};
    const auto vocab = g->label_vocabulary();
    SUBCASE("identical policies") {
        const auto p = random_policy(g, 2, 17);
        auto grp = sample_group(p, {0.3, 0.1}, 8, 4);
        score_group(grp, ctx, vocab, cfg);
        const auto r = grpo_objective(grp, p, p, cfg);
        CHECK(r.kl == 0.0);
        CHECK(std::abs(r.value) < 1e-9);
    }
    SUBCASE("gradient matches finite differences") {
        Rng rng(6);
        int checked = 0;
        for (int t = 0; t < 80 && checked < 50; ++t) {
            const auto old = random_policy(g, 2, 4000 + t);
            auto p = old;
            for (auto& x : p.params()) x += 0.05 * rng.normal();
            const auto ref = random_policy(g, 2, 8000 + t);
            const auto o = random_obs(2, rng);
            auto grp = sample_group(old, o, 8, 31 + t);
            score_group(grp, ctx, vocab, cfg);
            // skip instances sitting on a clip boundary where the objective has a kink
            bool near_kink = false;
            for (size_t i = 0; i < grp.choices.size(); ++i) {
                const double ratio = std::exp(log_prob(p, o, grp.choices[i]) - grp.old_log_probs[i]);
                near_kink |= std::abs(ratio - 1 - cfg.clip_eps) < 1e-3 || std::abs(ratio - 1 + cfg.clip_eps) < 1e-3;
            }
            if (near_kink) continue;
            ++checked;
            const auto res = grpo_objective(grp, p, ref, cfg);
            CHECK(max_fd_error(p, res.gradient,
                               [&](const TemplatePolicy& q) { return grpo_objective(grp, q, ref, cfg).value; }) <
                  1e-5);
        }
        CHECK(checked >= 50);
    }
}

TEST_CASE("sft training limits") {
    const auto g = toy_grammar();
    const Observation o{1.0};
    SUBCASE("zero epochs is a no-op") {
        auto p = random_policy(g, 1, 2);
        const auto before = p.params();
        const auto losses = sft_train(p, {{o, random_choice(p, o, 1)}}, {0.5, 0});
        CHECK(losses.size() == 1);
        CHECK(p.params() == before);
    }
    SUBCASE("single response is memorized") {
        auto p = random_policy(g, 1, 2);
        const auto c = random_choice(p, o, 3);
        sft_train(p, {{o, c}}, {0.5, 2000});
        CHECK(std::exp(log_prob(p, o, c)) > 0.99);
        CHECK(greedy_choice(distribution(p, o), *g) == c);
    }
}

TEST_CASE("grpo training limits") {
    const auto g = toy_grammar();
    const rewards::RewardContext ctx{{{{"alpha", "alpha", "alpha"}, {"gamma", "gamma", "gamma"}, {"eps", "eps", "eps"}}},
                                     {"lesion"}};
    std::vector<TrainingExample> data;
    Rng rng(2);
    for (int i = 0; i < 8; ++i) data.push_back({random_obs(2, rng), ctx, false});
    const auto ref = random_policy(g, 2, 10);
    GrpoConfig cfg;
    cfg.steps = 30;
    cfg.batch_size = 4;
    SUBCASE("large beta keeps the policy at the reference") {
        cfg.beta = 1e3;
        cfg.learning_rate = 0.01;
        auto p = ref;
        grpo_train(p, ref, data, {}, g->label_vocabulary(), cfg);
        for (const auto& ex : data) CHECK(kl_divergence(p, ref, ex.observation) < 0.01);
    }
    SUBCASE("zero weights leave only the kl pull") {
        cfg.weights = {0, 0, 0};
        auto p = ref;
        grpo_train(p, ref, data, {}, g->label_vocabulary(), cfg);
        CHECK(p.params() == ref.params());
    }
    SUBCASE("reward rises and training is deterministic") {
        cfg.steps = 60;
        cfg.learning_rate = 0.05;
        auto a = ref, b = ref;
        const auto la = grpo_train(a, ref, data, {}, g->label_vocabulary(), cfg);
        const auto lb = grpo_train(b, ref, data, {}, g->label_vocabulary(), cfg);
        CHECK(a.params() == b.params());
        REQUIRE(la.size() == 60);
        double first = 0, last = 0;
        for (int i = 0; i < 10; ++i) first += la[i].mean_reward, last += la[50 + i].mean_reward;
        CHECK(last > first);
    }
    SUBCASE("invalid config") {
        cfg.group_size = 1;
        auto p = ref;
        CHECK_THROWS_AS(grpo_train(p, ref, data, {}, g->label_vocabulary(), cfg), ConfigError);
    }
}
