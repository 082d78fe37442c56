// SPDX-License-Identifier: Apache-2.0
#include "cfgrpo/experiments.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "cfgrpo/config.hpp"
#include "cfgrpo/error.hpp"
#include "cfgrpo/parallel.hpp"
#include "cfgrpo/raster.hpp"

namespace cfgrpo::experiments {

namespace fs = std::filesystem;

namespace {

constexpr uint64_t kTagInit = 0x1417;
constexpr uint64_t kTagSpot = 0x5B07;
constexpr uint64_t kTagSample = 0x5A3B;

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

void write_json(const std::string& dir, const std::string& name, const json& j) {
    write_text((fs::path(dir) / name).string(), j.dump(2) + "\n");
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

std::vector<grpo::Observation> featurize_all(const grpo::ObservationFeaturizer& fz,
                                             const std::vector<const corpus::CorpusRecord*>& recs,
                                             const std::function<RasterImage(size_t)>& image_of) {
    std::vector<grpo::Observation> out(recs.size());
    parallel_for(recs.size(), [&](size_t i) { out[i] = fz.features(image_of(i)); });
    return out;
}

MetricsReport evaluate_observations(const grpo::TemplatePolicy& policy,
                                    const std::vector<const corpus::CorpusRecord*>& records,
                                    const std::vector<grpo::Observation>& obs, const EvalOptions& opt) {
    const auto& g = policy.grammar();
    std::vector<rewards::StructuredResponse> responses(records.size());
    parallel_for(records.size(), [&](size_t i) {
        const auto d = grpo::distribution(policy, obs[i]);
        grpo::ResponseChoice c;
        if (opt.sample) {
            Rng rng = Rng::derive(opt.seed, kTagSample + i);
            c = grpo::sample_choice(d, g, rng);
        } else {
            c = grpo::greedy_choice(d, g);
        }
        responses[i] = rewards::StructuredResponse::parse(grpo::render_choice(g, c));
    });
    return score_responses(records, responses, g.label_vocabulary(), opt.weights);
}

MetricsReport evaluate_with_obs(const grpo::TemplatePolicy& policy, const grpo::ObservationFeaturizer& fz,
                                const std::vector<const corpus::CorpusRecord*>& records,
                                const std::vector<grpo::Observation>& clean_obs, const EvalOptions& opt) {
    MetricsReport rep = evaluate_observations(policy, records, clean_obs, opt);
    if (opt.perturb) {
        const auto spotted = featurize_all(fz, records, [&](size_t i) {
            SpotInterferenceConfig sc = *opt.perturb;
            sc.seed = mix_seed(opt.perturb->seed, kTagSpot + i);
            return apply_spot_interference(records[i]->image, sc);
        });
        const auto p = evaluate_observations(policy, records, spotted, opt);
        rep.perturbed_accuracy = p.overall_accuracy;
        rep.robustness_drop = rep.overall_accuracy - p.overall_accuracy;
    }
    return rep;
}

json lambda_key(double l) {
    std::ostringstream os;
    os << l;
    return os.str();
}

// Fresh draws from the same generator (same causal map); causal_accuracy decorrelates z_e.
std::vector<latent::LatentSample> held_out_samples(const ExperimentConfig& cfg) {
    auto all = latent::generate_samples(cfg.latent, 2 * cfg.latent_samples);
    return {all.begin() + cfg.latent_samples, all.end()};
}

std::vector<uint64_t> seeds_of(const ExperimentConfig& cfg) {
    return cfg.seeds.empty() ? std::vector<uint64_t>{cfg.seed} : cfg.seeds;
}

ExperimentConfig for_seed(const ExperimentConfig& cfg, uint64_t s) {
    ExperimentConfig c = cfg;
    c.apply_seed(s);
    return c;
}

struct PipelineRun {
    grpo::TemplatePolicy sft_policy;
    std::vector<double> sft_losses;
};

PipelineRun run_sft(const Workbench& wb, const ExperimentConfig& cfg) {
    PipelineRun r{wb.fresh_policy(cfg), {}};
    r.sft_losses = grpo::sft_train(r.sft_policy, wb.sft_examples(), cfg.sft);
    return r;
}

struct GrpoRun {
    grpo::TemplatePolicy policy;
    std::vector<grpo::GrpoLogRow> log;
};

GrpoRun run_grpo(const Workbench& wb, const grpo::TemplatePolicy& sft_policy, const grpo::GrpoConfig& gcfg,
                 const std::optional<MaskStrategy>& strategy) {
    GrpoRun r{sft_policy, {}};
    const auto cfs = strategy ? wb.counterfactuals(*strategy) : std::vector<grpo::TrainingExample>{};
    r.log = grpo::grpo_train(r.policy, sft_policy, wb.originals(), cfs, wb.grammar->label_vocabulary(), gcfg);
    return r;
}

std::string sft_loss_csv(const std::vector<double>& losses) {
    std::string s = "epoch,loss\n";
    for (size_t i = 0; i < losses.size(); ++i) s += std::to_string(i) + "," + fmt(losses[i]) + "\n";
    return s;
}

// ---------------------------------------------------------------------------

json run_theory_shortcut(const ExperimentConfig& cfg) {
    const auto data = latent::generate_samples(cfg.latent, cfg.latent_samples);
    latent::TrainConfig tc = cfg.latent_train;
    tc.lambda_cf = 0.0;
    const auto [model, traj] = latent::train(latent::DiagnosticModel::zeros(cfg.latent), data, tc, cfg.latent);
    write_text((fs::path(cfg.out_dir) / "trajectory.csv").string(), latent::trajectory_csv(traj));
    const auto& last = traj.back();
    const auto& first = traj.at(std::min<size_t>(1, traj.size() - 1));
    json s = {{"experiment", "theory-shortcut"},
              {"seed", cfg.latent.seed},
              {"steps", last.step},
              {"norm_wc", last.norm_wc},
              {"norm_we", last.norm_we},
              {"s_c", last.s_c},
              {"s_e", last.s_e},
              {"sensitivity_ratio", last.s_e / std::max(last.s_c, 1e-300)},
              {"step1_delta_wc", first.norm_wc},
              {"step1_delta_we", first.norm_we},
              {"s_e_gt_s_c", last.s_e > last.s_c},
              {"norm_we_gt_norm_wc", last.norm_we > last.norm_wc},
              {"early_spurious_faster", first.norm_we > first.norm_wc},
              {"causal_accuracy", latent::causal_accuracy(model, held_out_samples(cfg), cfg.latent)}};
    write_json(cfg.out_dir, "summary.json", s);
    return s;
}

json run_theory_rectify(const ExperimentConfig& cfg) {
    const auto data = latent::generate_samples(cfg.latent, cfg.latent_samples);
    const auto test = held_out_samples(cfg);
    const latent::Featurizer fz(cfg.latent);
    std::string csv = "lambda,steps,norm_wc,norm_we,s_c,s_e,mean_f_cf,causal_accuracy\n";
    json rows = json::array();
    std::vector<double> se;
    for (double lam : cfg.lambdas) {
        latent::TrainConfig tc = cfg.latent_train;
        tc.lambda_cf = lam;
        const auto [model, traj] = latent::train(latent::DiagnosticModel::zeros(cfg.latent), data, tc, cfg.latent);
        const auto& last = traj.back();
        const double fcf = latent::mean_counterfactual_prediction(model, data, fz);
        const double acc = latent::causal_accuracy(model, test, cfg.latent);
        write_text((fs::path(cfg.out_dir) / ("trajectory_lambda_" + lambda_key(lam).get<std::string>() + ".csv")).string(),
                   latent::trajectory_csv(traj));
        csv += fmt(lam) + "," + std::to_string(last.step) + "," + fmt(last.norm_wc) + "," + fmt(last.norm_we) + "," +
               fmt(last.s_c) + "," + fmt(last.s_e) + "," + fmt(fcf) + "," + fmt(acc) + "\n";
        rows.push_back({{"lambda", lam},
                        {"steps", last.step},
                        {"s_c", last.s_c},
                        {"s_e", last.s_e},
                        {"norm_wc", last.norm_wc},
                        {"norm_we", last.norm_we},
                        {"mean_f_cf", fcf},
                        {"causal_accuracy", acc}});
        se.push_back(last.s_e);
    }
    bool nonincreasing = true;
    for (size_t i = 1; i < se.size(); ++i)
        if (se[i] > se[i - 1] * 1.05) nonincreasing = false;
    write_text((fs::path(cfg.out_dir) / "sweep.csv").string(), csv);
    json s = {{"experiment", "theory-rectify"},
              {"seed", cfg.latent.seed},
              {"sweep", rows},
              {"s_e_nonincreasing", nonincreasing}};
    if (rows.size() >= 2) {
        s["causal_accuracy_gain"] = rows.back()["causal_accuracy"].get<double>() - rows.front()["causal_accuracy"].get<double>();
        s["final_mean_f_cf"] = rows.back()["mean_f_cf"];
    }
    write_json(cfg.out_dir, "summary.json", s);
    return s;
}

json run_corpus_gen(const ExperimentConfig& cfg) {
    const auto c = corpus::generate_corpus(cfg.corpus);
    corpus::save_corpus(c, cfg.out_dir);
    size_t multi = 0, train = 0;
    for (const auto& r : c.records) {
        multi += r.labels.size() > 1 ? 1 : 0;
        train += r.split == "train" ? 1 : 0;
    }
    return {{"experiment", "corpus-gen"},
            {"seed", cfg.corpus.seed},
            {"records", c.records.size()},
            {"train", train},
            {"test", c.records.size() - train},
            {"multi_label", multi},
            {"path", cfg.out_dir}};
}

json run_sft_experiment(const ExperimentConfig& cfg) {
    const auto wb = Workbench::build(cfg);
    const auto run = run_sft(wb, cfg);
    write_text((fs::path(cfg.out_dir) / "sft_loss.csv").string(), sft_loss_csv(run.sft_losses));
    write_json(cfg.out_dir, "policy_sft.json", policy_to_json(run.sft_policy, wb.corpus.spec, cfg.featurizer));
    EvalOptions opt;
    opt.perturb = cfg.spot;
    opt.weights = cfg.grpo.weights;
    auto rep = evaluate_with_obs(run.sft_policy, *wb.featurizer, wb.test, wb.test_obs, opt);
    rep.counterfactual_pathology_probability = wb.counterfactual_pathology_probability(run.sft_policy, cfg.mask);
    rep.seed = cfg.seed;
    json s = {{"experiment", "sft"}, {"seed", cfg.seed}, {"metrics", rep.to_json()},
              {"initial_loss", run.sft_losses.front()}, {"final_loss", run.sft_losses.back()}};
    write_json(cfg.out_dir, "metrics.json", s);
    return s;
}

json run_grpo_experiment(const ExperimentConfig& cfg) {
    const auto wb = Workbench::build(cfg);
    const auto sft = run_sft(wb, cfg);
    const auto gr = run_grpo(wb, sft.sft_policy, cfg.grpo, cfg.mask);
    write_text((fs::path(cfg.out_dir) / "sft_loss.csv").string(), sft_loss_csv(sft.sft_losses));
    write_text((fs::path(cfg.out_dir) / "training_log.csv").string(), grpo::training_log_csv(gr.log));
    write_json(cfg.out_dir, "policy_sft.json", policy_to_json(sft.sft_policy, wb.corpus.spec, cfg.featurizer));
    write_json(cfg.out_dir, "policy_grpo.json", policy_to_json(gr.policy, wb.corpus.spec, cfg.featurizer));
    EvalOptions opt;
    opt.perturb = cfg.spot;
    opt.weights = cfg.grpo.weights;
    auto rs = evaluate_with_obs(sft.sft_policy, *wb.featurizer, wb.test, wb.test_obs, opt);
    auto rg = evaluate_with_obs(gr.policy, *wb.featurizer, wb.test, wb.test_obs, opt);
    rs.counterfactual_pathology_probability = wb.counterfactual_pathology_probability(sft.sft_policy, cfg.mask);
    rg.counterfactual_pathology_probability = wb.counterfactual_pathology_probability(gr.policy, cfg.mask);
    rs.seed = rg.seed = cfg.seed;
    double tail = 0.0;
    const size_t k = std::min<size_t>(20, gr.log.size());
    for (size_t i = gr.log.size() - k; i < gr.log.size(); ++i) tail += gr.log[i].mean_reward / static_cast<double>(k);
    json s = {{"experiment", "grpo"},
              {"seed", cfg.seed},
              {"sft", rs.to_json()},
              {"grpo", rg.to_json()},
              {"final_mean_reward", gr.log.empty() ? 0.0 : gr.log.back().mean_reward},
              {"final_mean_reward_last20", tail},
              {"mask", config::to_json(cfg.mask)}};
    write_json(cfg.out_dir, "metrics.json", s);
    return s;
}

json run_eval(const ExperimentConfig& cfg) {
    if (cfg.checkpoint.empty()) throw ConfigError("eval: config field 'checkpoint' is required");
    corpus::CorpusSpec spec;
    grpo::FeaturizerConfig fcfg;
    const auto policy = policy_from_json(config::parse_json(read_text(cfg.checkpoint), cfg.checkpoint), &spec, &fcfg);
    ExperimentConfig c = cfg;
    c.featurizer = fcfg;
    if (c.corpus_path.empty()) c.corpus = spec;
    const auto wb = Workbench::build(c);
    if (wb.corpus.spec.pathologies != spec.pathologies)
        throw ContractViolation("eval: checkpoint label vocabulary does not match the corpus");
    EvalOptions opt;
    opt.perturb = cfg.spot;
    opt.sample = cfg.sample_decoding;
    opt.seed = cfg.seed;
    opt.weights = cfg.grpo.weights;
    auto rep = evaluate_with_obs(policy, *wb.featurizer, wb.test, wb.test_obs, opt);
    rep.counterfactual_pathology_probability = wb.counterfactual_pathology_probability(policy, cfg.mask);
    rep.seed = cfg.seed;
    json s = {{"experiment", "eval"}, {"seed", cfg.seed}, {"checkpoint", cfg.checkpoint}, {"metrics", rep.to_json()}};
    write_json(cfg.out_dir, "metrics.json", s);
    return s;
}

json run_ablate_mask(const ExperimentConfig& cfg) {
    std::string csv = "seed,sft_accuracy,blur_accuracy,fill_accuracy,blur_cf_pathology_prob,fill_cf_pathology_prob\n";
    json rows = json::array();
    int blur_wins = 0, n = 0;
    for (uint64_t s : seeds_of(cfg)) {
        const auto c = for_seed(cfg, s);
        const auto wb = Workbench::build(c);
        const auto sft = run_sft(wb, c);
        const GaussianBlur blur = std::holds_alternative<GaussianBlur>(c.mask) ? std::get<GaussianBlur>(c.mask) : GaussianBlur{};
        const auto gb = run_grpo(wb, sft.sft_policy, c.grpo, MaskStrategy{blur});
        const auto gf = run_grpo(wb, sft.sft_policy, c.grpo, MaskStrategy{SolidFill{1.0}});
        const auto a0 = evaluate_with_obs(sft.sft_policy, *wb.featurizer, wb.test, wb.test_obs, {}).overall_accuracy;
        const auto ab = evaluate_with_obs(gb.policy, *wb.featurizer, wb.test, wb.test_obs, {}).overall_accuracy;
        const auto af = evaluate_with_obs(gf.policy, *wb.featurizer, wb.test, wb.test_obs, {}).overall_accuracy;
        const double pb = wb.counterfactual_pathology_probability(gb.policy, MaskStrategy{blur});
        const double pf = wb.counterfactual_pathology_probability(gf.policy, MaskStrategy{SolidFill{1.0}});
        write_text((fs::path(c.out_dir) / ("training_log_blur_seed" + std::to_string(s) + ".csv")).string(),
                   grpo::training_log_csv(gb.log));
        write_text((fs::path(c.out_dir) / ("training_log_fill_seed" + std::to_string(s) + ".csv")).string(),
                   grpo::training_log_csv(gf.log));
        csv += std::to_string(s) + "," + fmt(a0) + "," + fmt(ab) + "," + fmt(af) + "," + fmt(pb) + "," + fmt(pf) + "\n";
        rows.push_back({{"seed", s}, {"sft", a0}, {"blur", ab}, {"fill", af}});
        blur_wins += ab >= af ? 1 : 0;
        ++n;
    }
    write_text((fs::path(cfg.out_dir) / "ablate_mask.csv").string(), csv);
    json s = {{"experiment", "ablate-mask"},
              {"runs", rows},
              {"blur_ge_fill_seeds", blur_wins},
              {"verdict", 2 * blur_wins > n ? "blur>=fill" : "fill>blur"}};
    write_json(cfg.out_dir, "summary.json", s);
    return s;
}

json run_ablate_rewards(const ExperimentConfig& cfg) {
    std::string csv = "seed,sft_accuracy,full_accuracy,no_cog_accuracy,no_diag_accuracy\n";
    json rows = json::array();
    int cog_hurts = 0, diag_hurts = 0, n = 0;
    for (uint64_t s : seeds_of(cfg)) {
        const auto c = for_seed(cfg, s);
        const auto wb = Workbench::build(c);
        const auto sft = run_sft(wb, c);
        auto g_nocog = c.grpo;
        g_nocog.weights.w_cog = 0.0;
        auto g_nodiag = c.grpo;
        g_nodiag.weights.w_diag = 0.0;
        const auto full = run_grpo(wb, sft.sft_policy, c.grpo, c.mask);
        const auto nocog = run_grpo(wb, sft.sft_policy, g_nocog, c.mask);
        const auto nodiag = run_grpo(wb, sft.sft_policy, g_nodiag, c.mask);
        auto acc = [&](const grpo::TemplatePolicy& p) {
            return evaluate_with_obs(p, *wb.featurizer, wb.test, wb.test_obs, {}).overall_accuracy;
        };
        const double a0 = acc(sft.sft_policy), af = acc(full.policy), ac = acc(nocog.policy), ad = acc(nodiag.policy);
        csv += std::to_string(s) + "," + fmt(a0) + "," + fmt(af) + "," + fmt(ac) + "," + fmt(ad) + "\n";
        rows.push_back({{"seed", s}, {"sft", a0}, {"full", af}, {"no_cog", ac}, {"no_diag", ad}});
        cog_hurts += ac < af ? 1 : 0;
        diag_hurts += ad < af ? 1 : 0;
        ++n;
    }
    write_text((fs::path(cfg.out_dir) / "ablate_rewards.csv").string(), csv);
    json s = {{"experiment", "ablate-rewards"},
              {"runs", rows},
              {"no_cog_worse_seeds", cog_hurts},
              {"no_diag_worse_seeds", diag_hurts},
              {"seeds", n}};
    write_json(cfg.out_dir, "summary.json", s);
    return s;
}

json run_robustness(const ExperimentConfig& cfg) {
    std::string csv = "seed,sft_clean,sft_spotted,sft_drop,grpo_clean,grpo_spotted,grpo_drop\n";
    json rows = json::array();
    int ok = 0, n = 0;
    for (uint64_t s : seeds_of(cfg)) {
        const auto c = for_seed(cfg, s);
        const auto wb = Workbench::build(c);
        const auto sft = run_sft(wb, c);
        const auto gr = run_grpo(wb, sft.sft_policy, c.grpo, c.mask);
        EvalOptions opt;
        opt.perturb = c.spot;
        const auto rs = evaluate_with_obs(sft.sft_policy, *wb.featurizer, wb.test, wb.test_obs, opt);
        const auto rg = evaluate_with_obs(gr.policy, *wb.featurizer, wb.test, wb.test_obs, opt);
        csv += std::to_string(s) + "," + fmt(rs.overall_accuracy) + "," + fmt(*rs.perturbed_accuracy) + "," +
               fmt(*rs.robustness_drop) + "," + fmt(rg.overall_accuracy) + "," + fmt(*rg.perturbed_accuracy) + "," +
               fmt(*rg.robustness_drop) + "\n";
        rows.push_back({{"seed", s}, {"sft", rs.to_json()}, {"grpo", rg.to_json()}});
        ok += *rg.robustness_drop <= *rs.robustness_drop + 0.005 ? 1 : 0;
        ++n;
    }
    write_text((fs::path(cfg.out_dir) / "robustness.csv").string(), csv);
    json s = {{"experiment", "robustness"}, {"runs", rows}, {"grpo_drop_le_sft_seeds", ok}, {"seeds", n}};
    write_json(cfg.out_dir, "summary.json", s);
    return s;
}

} // namespace

// ---------------------------------------------------------------------------

void ExperimentConfig::apply_seed(uint64_t s) {
    seed = s;
    latent.seed = s;
    latent_train.seed = s;
    corpus.seed = s;
    grpo.seed = s;
    spot.seed = s;
}

ExperimentConfig read_experiment_config(const json& j, const std::string& name, std::optional<uint64_t> seed,
                                        const std::string& out_dir) {
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    ExperimentConfig c;
    std::set<std::string> known = {"experiment", "seed",     "out",        "latent",     "latent_train",
                                   "latent_samples", "lambdas", "corpus",   "corpus_path", "featurizer",
                                   "sft",        "grpo",     "mask",       "spot",       "seeds",
                                   "checkpoint", "tie_evidence", "init_scale", "sample_decoding"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw ConfigError("config." + it.key() + ": unknown field");
    auto typed = [&](const char* key, auto& out) {
        if (!j.contains(key)) return;
        try {
            out = j.at(key).get<std::decay_t<decltype(out)>>();
        } catch (const json::exception&) {
            throw ConfigError(std::string("config.") + key + ": wrong type");
        }
    };
    typed("experiment", c.experiment);
    if (!name.empty()) c.experiment = name;
    if (std::find(kExperiments.begin(), kExperiments.end(), c.experiment) == kExperiments.end())
        throw ConfigError("config.experiment: unknown experiment '" + c.experiment + "'");
    uint64_t s = 1;
    typed("seed", s);
    typed("out", c.out_dir);
    if (!out_dir.empty()) c.out_dir = out_dir;
    if (c.out_dir.empty()) throw ConfigError("config.out: output directory is required");
    if (j.contains("latent")) c.latent = config::read_latent(j["latent"], "config.latent");
    if (j.contains("latent_train")) c.latent_train = config::read_latent_train(j["latent_train"], "config.latent_train");
    typed("latent_samples", c.latent_samples);
    if (c.latent_samples < 1) throw ConfigError("config.latent_samples must be positive");
    typed("lambdas", c.lambdas);
    if (j.contains("corpus")) c.corpus = config::read_corpus_spec(j["corpus"], "config.corpus");
    typed("corpus_path", c.corpus_path);
    if (j.contains("featurizer")) config::read_featurizer(j["featurizer"], "config.featurizer", c.featurizer);
    if (j.contains("sft")) config::read_sft(j["sft"], "config.sft", c.sft);
    if (j.contains("grpo")) config::read_grpo(j["grpo"], "config.grpo", c.grpo);
    if (j.contains("mask")) c.mask = config::read_mask_strategy(j["mask"], "config.mask");
    if (j.contains("spot")) c.spot = config::read_spot(j["spot"], "config.spot");
    typed("seeds", c.seeds);
    typed("checkpoint", c.checkpoint);
    typed("tie_evidence", c.tie_evidence);
    typed("init_scale", c.init_scale);
    typed("sample_decoding", c.sample_decoding);
    if (!(c.init_scale >= 0)) throw ConfigError("config.init_scale must be nonnegative");
    c.apply_seed(seed.value_or(s));
    return c;
}

json MetricsReport::to_json() const {
    json j = {{"overall_accuracy", overall_accuracy},
              {"single_accuracy", single_accuracy},
              {"multi_accuracy", multi_accuracy},
              {"n_single", n_single},
              {"n_multi", n_multi},
              {"mean_r_fmt", mean_r_fmt},
              {"mean_r_cog", mean_r_cog},
              {"mean_r_diag", mean_r_diag},
              {"mean_total_reward", mean_total},
              {"seed", seed}};
    if (perturbed_accuracy) j["perturbed_accuracy"] = *perturbed_accuracy;
    if (robustness_drop) j["robustness_drop"] = *robustness_drop;
    if (counterfactual_pathology_probability)
        j["counterfactual_pathology_probability"] = *counterfactual_pathology_probability;
    return j;
}

MetricsReport score_responses(const std::vector<const corpus::CorpusRecord*>& records,
                              const std::vector<rewards::StructuredResponse>& responses,
                              const std::set<std::string>& vocabulary, const rewards::RewardWeights& w) {
    CFGRPO_REQUIRE(records.size() == responses.size(), "score_responses: size mismatch");
    CFGRPO_REQUIRE(!records.empty(), "score_responses: no records");
    MetricsReport rep;
    size_t ok_single = 0, ok_multi = 0;
    for (size_t i = 0; i < records.size(); ++i) {
        const auto& r = *records[i];
        for (const auto& l : r.labels)
            CFGRPO_REQUIRE(vocabulary.count(l), "evaluate: label '" + l + "' is outside the policy vocabulary");
        const auto b = rewards::score_response(responses[i], {r.keywords, r.labels}, vocabulary, w);
        rep.mean_r_fmt += b.r_fmt;
        rep.mean_r_cog += b.r_cog;
        rep.mean_r_diag += b.r_diag;
        rep.mean_total += b.total;
        const bool ok = b.r_diag == 1.0;
        if (r.labels.size() > 1) {
            ++rep.n_multi;
            ok_multi += ok ? 1 : 0;
        } else {
            ++rep.n_single;
            ok_single += ok ? 1 : 0;
        }
    }
    const double n = static_cast<double>(records.size());
    rep.mean_r_fmt /= n;
    rep.mean_r_cog /= n;
    rep.mean_r_diag /= n;
    rep.mean_total /= n;
    rep.single_accuracy = rep.n_single ? static_cast<double>(ok_single) / static_cast<double>(rep.n_single) : 0.0;
    rep.multi_accuracy = rep.n_multi ? static_cast<double>(ok_multi) / static_cast<double>(rep.n_multi) : 0.0;
    rep.overall_accuracy = (static_cast<double>(rep.n_single) * rep.single_accuracy +
                            static_cast<double>(rep.n_multi) * rep.multi_accuracy) /
                           n;
    return rep;
}

MetricsReport evaluate(const grpo::TemplatePolicy& policy, const grpo::ObservationFeaturizer& fz,
                       const std::vector<const corpus::CorpusRecord*>& records, const EvalOptions& opt) {
    CFGRPO_REQUIRE(fz.dim() == policy.obs_dim(), "evaluate: featurizer and policy dimensions differ");
    const auto obs = featurize_all(fz, records, [&](size_t i) { return records[i]->image; });
    return evaluate_with_obs(policy, fz, records, obs, opt);
}

json policy_to_json(const grpo::TemplatePolicy& p, const corpus::CorpusSpec& spec, const grpo::FeaturizerConfig& f) {
    json blocks = json::array();
    for (const auto& b : p.blocks()) {
        std::vector<double> v(p.params().begin() + static_cast<long>(b.offset),
                              p.params().begin() + static_cast<long>(b.offset + static_cast<size_t>(b.rows) * b.cols));
        blocks.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}, {"values", v}});
    }
    return {{"format", "cfgrpo-policy"},
            {"version", 1},
            {"obs_dim", p.obs_dim()},
            {"tie_evidence", p.tied()},
            {"corpus_spec", config::to_json(spec)},
            {"featurizer", config::to_json(f)},
            {"blocks", blocks}};
}

grpo::TemplatePolicy policy_from_json(const json& j, corpus::CorpusSpec* spec_out, grpo::FeaturizerConfig* feat_out) {
    try {
        if (j.value("format", "") != "cfgrpo-policy") throw IoError("checkpoint: not a policy checkpoint");
        if (j.at("version").get<int>() != 1) throw IoError("checkpoint: unsupported version");
        const auto spec = config::read_corpus_spec(j.at("corpus_spec"), "checkpoint.corpus_spec");
        grpo::FeaturizerConfig fc;
        config::read_featurizer(j.at("featurizer"), "checkpoint.featurizer", fc);
        auto g = std::make_shared<const grpo::Grammar>(grpo::Grammar::from_corpus_spec(spec));
        grpo::TemplatePolicy p(g, j.at("obs_dim").get<int>(), j.at("tie_evidence").get<bool>());
        const auto& blocks = j.at("blocks");
        if (blocks.size() != p.blocks().size()) throw IoError("checkpoint: block count mismatch");
        for (size_t i = 0; i < blocks.size(); ++i) {
            const auto& b = p.blocks()[i];
            const auto& jb = blocks[i];
            if (jb.at("name").get<std::string>() != b.name || jb.at("rows").get<int>() != b.rows ||
                jb.at("cols").get<int>() != b.cols)
                throw IoError("checkpoint: block '" + b.name + "' shape mismatch");
            const auto v = jb.at("values").get<std::vector<double>>();
            if (v.size() != static_cast<size_t>(b.rows) * b.cols) throw IoError("checkpoint: block value count mismatch");
            std::copy(v.begin(), v.end(), p.params().begin() + static_cast<long>(b.offset));
        }
        if (spec_out) *spec_out = spec;
        if (feat_out) *feat_out = fc;
        return p;
    } catch (const json::exception& e) {
        throw IoError(std::string("checkpoint: malformed (") + e.what() + ")");
    }
}

Workbench Workbench::build(const ExperimentConfig& cfg) {
    Workbench wb;
    wb.corpus = cfg.corpus_path.empty() ? corpus::generate_corpus(cfg.corpus) : corpus::load_corpus(cfg.corpus_path);
    wb.grammar = std::make_shared<const grpo::Grammar>(grpo::Grammar::from_corpus_spec(wb.corpus.spec));
    wb.featurizer = std::make_unique<grpo::ObservationFeaturizer>(wb.corpus.spec, cfg.featurizer);
    wb.train = wb.corpus.split("train");
    wb.test = wb.corpus.split("test");
    if (wb.train.empty() || wb.test.empty()) throw ConfigError("corpus must have both train and test records");
    wb.train_obs = featurize_all(*wb.featurizer, wb.train, [&](size_t i) { return wb.train[i]->image; });
    wb.test_obs = featurize_all(*wb.featurizer, wb.test, [&](size_t i) { return wb.test[i]->image; });
    return wb;
}

std::vector<grpo::TrainingExample> Workbench::originals() const {
    std::vector<grpo::TrainingExample> out;
    for (size_t i = 0; i < train.size(); ++i) out.push_back({train_obs[i], {train[i]->keywords, train[i]->labels}, false});
    return out;
}

std::vector<grpo::TrainingExample> Workbench::counterfactuals(const MaskStrategy& strategy) const {
    std::vector<const corpus::CorpusRecord*> src;
    for (const auto* r : train)
        if (!r->lesion_mask.empty()) src.push_back(r);
    std::vector<grpo::TrainingExample> out(src.size());
    parallel_for(src.size(), [&](size_t i) {
        const auto cf = corpus::make_counterfactual_record(*src[i], strategy, corpus.spec);
        out[i] = {featurizer->features(cf.image), {cf.keywords, cf.labels}, true};
    });
    return out;
}

std::vector<grpo::SftExample> Workbench::sft_examples() const {
    std::vector<grpo::SftExample> out;
    for (size_t i = 0; i < train.size(); ++i)
        out.push_back({train_obs[i], grpo::choice_from_gold(*grammar, train[i]->keywords, train[i]->labels)});
    return out;
}

grpo::TemplatePolicy Workbench::fresh_policy(const ExperimentConfig& cfg) const {
    grpo::TemplatePolicy p(grammar, featurizer->dim(), cfg.tie_evidence);
    p.init_random(mix_seed(cfg.seed, kTagInit), cfg.init_scale);
    return p;
}

double Workbench::counterfactual_pathology_probability(const grpo::TemplatePolicy& p,
                                                       const MaskStrategy& strategy) const {
    std::vector<const corpus::CorpusRecord*> src;
    for (const auto* r : test)
        if (!r->lesion_mask.empty()) src.push_back(r);
    if (src.empty()) return 0.0;
    std::vector<double> prob(src.size());
    parallel_for(src.size(), [&](size_t i) {
        const auto cf = corpus::make_counterfactual_record(*src[i], strategy, corpus.spec);
        prob[i] = 1.0 - grpo::distribution(p, featurizer->features(cf.image)).diagnosis[0];
    });
    double s = 0.0;
    for (double x : prob) s += x;
    return s / static_cast<double>(src.size());
}

json run_experiment(const ExperimentConfig& cfg) {
    ensure_dir(cfg.out_dir);
    const auto t0 = std::chrono::steady_clock::now();
    json s;
    const auto& e = cfg.experiment;
    if (e == "theory-shortcut") s = run_theory_shortcut(cfg);
    else if (e == "theory-rectify") s = run_theory_rectify(cfg);
    else if (e == "corpus-gen") s = run_corpus_gen(cfg);
    else if (e == "sft") s = run_sft_experiment(cfg);
    else if (e == "grpo") s = run_grpo_experiment(cfg);
    else if (e == "eval") s = run_eval(cfg);
    else if (e == "ablate-mask") s = run_ablate_mask(cfg);
    else if (e == "ablate-rewards") s = run_ablate_rewards(cfg);
    else if (e == "robustness") s = run_robustness(cfg);
    else throw ConfigError("unknown experiment '" + e + "'");
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(cfg.out_dir, "run_info.json",
               {{"experiment", e}, {"seed", cfg.seed}, {"duration_seconds", secs}, {"threads", thread_count()}});
    return s;
}

} // namespace cfgrpo::experiments
