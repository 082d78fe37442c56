// SPDX-License-Identifier: Apache-2.0
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "cfgrpo/cfgrpo.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;
constexpr int kExitInternal = 1;

int exit_code(cfgrpo_status s) {
    switch (s) {
    case CFGRPO_OK: return kExitOk;
    case CFGRPO_E_CONFIG:
    case CFGRPO_E_CONTRACT: return kExitConfig;
    case CFGRPO_E_IO:
    case CFGRPO_E_CORRUPTION: return kExitIo;
    case CFGRPO_E_NUMERICAL: return kExitNumerical;
    default: return kExitInternal;
    }
}

int report(cfgrpo_status s) {
    if (s != CFGRPO_OK) std::cerr << "error: " << cfgrpo_last_error() << "\n";
    return exit_code(s);
}

struct IoFailure {
    std::string msg;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure{"cannot read " + path};
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct ExperimentArgs {
    std::string config;
    std::string out;
    uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
};

void add_experiment_flags(CLI::App* cmd, ExperimentArgs& a) {
    cmd->add_option("--config", a.config, "experiment config (JSON)");
    cmd->add_option("--out", a.out, "output directory");
    a.seed_opt = cmd->add_option("--seed", a.seed, "seed (overrides the config)");
}

int run_experiment(const std::string& name, const ExperimentArgs& a) {
    const std::string cfg = a.config.empty() ? std::string("{}") : slurp(a.config);
    char* out = nullptr;
    const auto s = cfgrpo_run_experiment(name.c_str(), cfg.c_str(), a.out.empty() ? nullptr : a.out.c_str(), a.seed,
                                         a.seed_opt->count() > 0 ? 1 : 0, &out);
    if (s == CFGRPO_OK) {
        std::cout << out << "\n";
        cfgrpo_string_free(out);
    }
    return report(s);
}

struct ImageHandle {
    cfgrpo_image* p = nullptr;
    ~ImageHandle() { cfgrpo_image_free(p); }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cfgrpo: counterfactual GRPO experiments on a synthetic diagnostic corpus"};
    app.set_version_flag("--version", cfgrpo_version());
    app.require_subcommand(1);
    int threads = -1;
    app.add_option("--threads", threads, "worker threads (default: CFGRPO_THREADS or 1)");

    std::string selected;
    ExperimentArgs ea;
    auto experiment = [&](CLI::App* parent, const std::string& sub, const std::string& name, const std::string& help) {
        auto* c = parent->add_subcommand(sub, help);
        add_experiment_flags(c, ea);
        CLI::Option* seed_opt = ea.seed_opt;
        c->callback([&selected, &ea, name, seed_opt] {
            selected = name;
            ea.seed_opt = seed_opt;
        });
    };

    auto* corpus = app.add_subcommand("corpus", "synthetic corpus tools");
    corpus->require_subcommand(1);
    experiment(corpus, "gen", "corpus-gen", "generate a corpus into --out");
    auto* theory = app.add_subcommand("theory", "latent-factor experiments");
    theory->require_subcommand(1);
    experiment(theory, "shortcut", "theory-shortcut", "train without counterfactual penalty");
    experiment(theory, "rectify", "theory-rectify", "sweep the counterfactual penalty weight");
    auto* train = app.add_subcommand("train", "policy training");
    train->require_subcommand(1);
    experiment(train, "sft", "sft", "supervised fine-tuning");
    experiment(train, "grpo", "grpo", "SFT followed by counterfactual GRPO");
    experiment(&app, "eval", "eval", "evaluate a policy checkpoint");
    auto* ablate = app.add_subcommand("ablate", "ablation studies");
    ablate->require_subcommand(1);
    experiment(ablate, "mask", "ablate-mask", "Gaussian blur vs solid fill counterfactuals");
    experiment(ablate, "rewards", "ablate-rewards", "zero the cognition or diagnosis reward weight");
    experiment(&app, "robustness", "robustness", "accuracy drop under spot interference");

    std::string in, mask_path, out_path, strategy = "blur", spot_config;
    double sigma = 8.0, fill = 1.0;
    int radius = 24;
    auto* mask = app.add_subcommand("mask", "synthesize a counterfactual by masking lesion pixels");
    mask->add_option("input", in, "input raster")->required();
    mask->add_option("mask", mask_path, "lesion mask raster (0/1)")->required();
    mask->add_option("-o,--output", out_path, "output raster")->required();
    mask->add_option("--strategy", strategy, "blur or fill")->check(CLI::IsMember({"blur", "fill"}));
    mask->add_option("--sigma", sigma, "blur sigma");
    mask->add_option("--radius", radius, "blur kernel radius");
    mask->add_option("--value", fill, "fill value");

    auto* blur = app.add_subcommand("blur", "Gaussian blur of a whole raster");
    blur->add_option("input", in, "input raster")->required();
    blur->add_option("-o,--output", out_path, "output raster")->required();
    blur->add_option("--sigma", sigma, "blur sigma");
    blur->add_option("--radius", radius, "kernel radius");

    uint64_t spot_seed = 0;
    auto* perturb = app.add_subcommand("perturb", "apply simulated spot interference");
    perturb->add_option("input", in, "input raster")->required();
    perturb->add_option("-o,--output", out_path, "output raster")->required();
    perturb->add_option("--config", spot_config, "spot interference config (JSON)");
    auto* spot_seed_opt = perturb->add_option("--seed", spot_seed, "spot placement seed");

    std::string rewards_config;
    auto* rewards = app.add_subcommand("rewards", "score JSON-lines responses");
    rewards->add_option("input", in, "JSON-lines file of {response, keywords, gold_labels}")->required();
    rewards->add_option("--config", rewards_config, "options JSON {weights, vocabulary, strict_order}");
    rewards->add_option("-o,--output", out_path, "write the JSON result here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // help and version report success; everything else is a usage error
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }
    if (threads >= 0) cfgrpo_set_threads(threads);

    try {
        if (!selected.empty()) return run_experiment(selected, ea);

        if (mask->parsed()) {
            ImageHandle img, m, out;
            if (auto s = cfgrpo_image_load(in.c_str(), &img.p)) return report(s);
            if (auto s = cfgrpo_image_load(mask_path.c_str(), &m.p)) return report(s);
            std::ostringstream js;
            js.precision(17);
            if (strategy == "blur")
                js << "{\"kind\":\"blur\",\"sigma\":" << sigma << ",\"radius\":" << radius << "}";
            else
                js << "{\"kind\":\"fill\",\"value\":" << fill << "}";
            if (auto s = cfgrpo_counterfactual(img.p, m.p, js.str().c_str(), &out.p)) return report(s);
            return report(cfgrpo_image_save(out.p, out_path.c_str()));
        }
        if (blur->parsed()) {
            ImageHandle img, out;
            if (auto s = cfgrpo_image_load(in.c_str(), &img.p)) return report(s);
            if (auto s = cfgrpo_blur(img.p, sigma, radius, &out.p)) return report(s);
            return report(cfgrpo_image_save(out.p, out_path.c_str()));
        }
        if (perturb->parsed()) {
            std::string cfg = spot_config.empty() ? std::string("{}") : slurp(spot_config);
            if (spot_seed_opt->count() > 0) {
                // seed flag wins over the file
                const auto brace = cfg.rfind('}');
                if (brace == std::string::npos) {
                    std::cerr << "error: spot config must be a JSON object\n";
                    return kExitConfig;
                }
                const bool empty = cfg.find_first_not_of(" \t\r\n{", 0) == brace;
                cfg = cfg.substr(0, brace) + (empty ? "" : ",") + "\"seed\":" + std::to_string(spot_seed) + "}";
            }
            ImageHandle img, out;
            if (auto s = cfgrpo_image_load(in.c_str(), &img.p)) return report(s);
            if (auto s = cfgrpo_perturb(img.p, cfg.c_str(), &out.p)) return report(s);
            return report(cfgrpo_image_save(out.p, out_path.c_str()));
        }
        if (rewards->parsed()) {
            const std::string opts = rewards_config.empty() ? std::string() : slurp(rewards_config);
            char* result = nullptr;
            if (auto s = cfgrpo_score_rewards(in.c_str(), opts.empty() ? nullptr : opts.c_str(), &result))
                return report(s);
            std::string text(result);
            cfgrpo_string_free(result);
            if (out_path.empty()) {
                std::cout << text << "\n";
            } else {
                std::ofstream f(out_path, std::ios::binary);
                if (!(f << text << "\n")) throw IoFailure{"cannot write " + out_path};
            }
            return kExitOk;
        }
    } catch (const IoFailure& e) {
        std::cerr << "error: " << e.msg << "\n";
        return kExitIo;
    }
    std::cerr << app.help();
    return kExitConfig;
}
