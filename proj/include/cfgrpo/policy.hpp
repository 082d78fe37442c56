// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "cfgrpo/observation.hpp"
#include "cfgrpo/rewards.hpp"
#include "cfgrpo/rng.hpp"
#include "cfgrpo/synthcorpus.hpp"

namespace cfgrpo::grpo {

// Response grammar: three sections (include flag + keyword slots each) and a diagnosis.
struct Grammar {
    rewards::SectionSchema schema;
    std::array<std::vector<std::string>, 3> vocab;
    int slots = 3;
    std::vector<rewards::DiagnosisLabelSet> diagnoses;  // entry 0 is the reference class
    int n_classes = 0;
    std::vector<std::vector<int>> diagnosis_classes;    // classes named by each diagnosis entry
    std::array<std::vector<int>, 3> word_class;         // class of each word, -1 if none

    void validate() const;
    std::set<std::string> label_vocabulary() const;
    int diagnosis_index(const rewards::DiagnosisLabelSet& labels) const;  // -1 if absent
    int word_index(int section, const std::string& word) const;           // -1 if absent

    static Grammar from_corpus_spec(const corpus::CorpusSpec& spec);
};

struct ResponseChoice {
    std::array<int, 3> include{1, 1, 1};
    std::vector<int> words;  // sections*slots entries, -1 where the section is excluded
    int diagnosis = 0;

    bool operator==(const ResponseChoice&) const = default;
    bool operator<(const ResponseChoice& o) const {
        return std::tie(include, words, diagnosis) < std::tie(o.include, o.words, o.diagnosis);
    }
};

std::string render_choice(const Grammar& g, const ResponseChoice& c);
// Inverse of render_choice; throws ContractViolation for text outside the grammar.
ResponseChoice parse_choice(const Grammar& g, const rewards::StructuredResponse& r);
ResponseChoice choice_from_gold(const Grammar& g, const rewards::KeywordSet& k, const rewards::DiagnosisLabelSet& d);

struct ParamBlock {
    std::string name;
    int rows = 0;
    int cols = 0;
    size_t offset = 0;
};

struct Logits {
    std::array<double, 3> include{};
    std::array<std::vector<double>, 3> slot;  // slots*V_s per section, row-major by slot
    std::vector<double> diagnosis;
};

// Factored policy, every component affine in [observation; 1].
class TemplatePolicy {
  public:
    TemplatePolicy() = default;
    TemplatePolicy(std::shared_ptr<const Grammar> grammar, int obs_dim, bool tie_evidence = true);

    void init_random(uint64_t seed, double scale);

    const Grammar& grammar() const { return *grammar_; }
    std::shared_ptr<const Grammar> grammar_ptr() const { return grammar_; }
    int obs_dim() const { return obs_dim_; }
    bool tied() const { return tied_; }

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    const std::vector<ParamBlock>& blocks() const { return blocks_; }
    const ParamBlock& block(const std::string& name) const;
    // parameters held fixed (reference diagnosis row)
    const std::vector<uint8_t>& frozen() const { return frozen_; }
    void zero_frozen(std::vector<double>& grad) const;

    Logits logits(const Observation& obs) const;
    // grad += scale * d(sum of logit-gradient terms)/d params
    void backprop(const Observation& obs, const Logits& dlogits, double scale, std::vector<double>& grad) const;

  private:
    size_t add_block(const std::string& name, int rows, int cols);

    std::shared_ptr<const Grammar> grammar_;
    int obs_dim_ = 0;
    bool tied_ = true;
    std::vector<double> params_;
    std::vector<ParamBlock> blocks_;
    std::vector<uint8_t> frozen_;
    size_t inc_ = 0, diag_ = 0, evid_ = 0;
    std::array<size_t, 3> slot_{};
};

struct Distribution {
    std::array<double, 3> p_include{};
    std::array<std::vector<double>, 3> slot;  // probabilities, same layout as Logits::slot
    std::vector<double> diagnosis;
    std::array<double, 3> log_include{}, log_exclude{};
    std::array<std::vector<double>, 3> log_slot;
    std::vector<double> log_diagnosis;
};

Distribution distribution(const TemplatePolicy& p, const Observation& obs);

ResponseChoice sample_choice(const Distribution& d, const Grammar& g, Rng& rng);
ResponseChoice greedy_choice(const Distribution& d, const Grammar& g);

double log_prob(const TemplatePolicy& p, const Observation& obs, const ResponseChoice& c);
double log_prob(const TemplatePolicy& p, const Observation& obs, const rewards::StructuredResponse& r);
double log_prob(const Distribution& d, const Grammar& g, const ResponseChoice& c);
// d log pi(c) / d logits
Logits log_prob_logit_grad(const Distribution& d, const Grammar& g, const ResponseChoice& c);

double kl_divergence(const TemplatePolicy& p, const TemplatePolicy& ref, const Observation& obs);
double kl_divergence(const Distribution& p, const Distribution& q, const Grammar& g);
// d KL(p||q) / d logits of p
Logits kl_logit_grad(const Distribution& p, const Distribution& q, const Grammar& g);

// All responses of the grammar (for small grammars only).
std::vector<ResponseChoice> enumerate_choices(const Grammar& g, size_t limit = 100000);

} // namespace cfgrpo::grpo
