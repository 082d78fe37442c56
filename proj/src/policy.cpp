// SPDX-License-Identifier: Apache-2.0
#include "cfgrpo/policy.hpp"

#include <algorithm>
#include <cmath>

#include "cfgrpo/error.hpp"

namespace cfgrpo::grpo {

namespace {

void softmax(const double* logits, size_t n, double* prob, double* logp) {
    double mx = logits[0];
    for (size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += std::exp(logits[i] - mx);
    const double lse = mx + std::log(s);
    for (size_t i = 0; i < n; ++i) {
        logp[i] = logits[i] - lse;
        prob[i] = std::exp(logp[i]);
    }
}

double log_sigmoid(double t) { return t >= 0 ? -std::log1p(std::exp(-t)) : t - std::log1p(std::exp(t)); }

int sample_index(const double* p, size_t n, double u) {
    double c = 0.0;
    int last = -1;
    for (size_t i = 0; i < n; ++i) {
        if (p[i] <= 0.0) continue;
        last = static_cast<int>(i);
        c += p[i];
        if (u < c) return last;
    }
    return last < 0 ? 0 : last;
}

int argmax(const double* p, size_t n) {
    size_t best = 0;
    for (size_t i = 1; i < n; ++i)
        if (p[i] > p[best]) best = i;
    return static_cast<int>(best);
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_on(const std::string& s, const std::string& sep) {
    std::vector<std::string> out;
    size_t start = 0;
    for (;;) {
        const auto pos = s.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + sep.size();
    }
}

} // namespace

// ---------------------------------------------------------------------------
// Grammar

void Grammar::validate() const {
    schema.validate();
    CFGRPO_REQUIRE(slots >= 1, "grammar: slots must be positive");
    CFGRPO_REQUIRE(!diagnoses.empty(), "grammar: empty diagnosis list");
    CFGRPO_REQUIRE(diagnosis_classes.size() == diagnoses.size(), "grammar: diagnosis class table size mismatch");
    for (int s = 0; s < 3; ++s) {
        CFGRPO_REQUIRE(!vocab[s].empty(), "grammar: empty section vocabulary");
        CFGRPO_REQUIRE(word_class[s].size() == vocab[s].size(), "grammar: word class table size mismatch");
        for (const auto& w : vocab[s])
            CFGRPO_REQUIRE(!w.empty() && w.find_first_of(",\n") == std::string::npos, "grammar: invalid word");
        for (int c : word_class[s]) CFGRPO_REQUIRE(c >= -1 && c < n_classes, "grammar: word class out of range");
    }
    CFGRPO_REQUIRE(diagnosis_classes[0].empty(), "grammar: reference diagnosis must not name a class");
    for (const auto& dc : diagnosis_classes)
        for (int c : dc) CFGRPO_REQUIRE(c >= 0 && c < n_classes, "grammar: diagnosis class out of range");
}

std::set<std::string> Grammar::label_vocabulary() const {
    std::set<std::string> v;
    for (const auto& d : diagnoses) v.insert(d.begin(), d.end());
    return v;
}

int Grammar::diagnosis_index(const rewards::DiagnosisLabelSet& labels) const {
    for (size_t i = 0; i < diagnoses.size(); ++i)
        if (diagnoses[i] == labels) return static_cast<int>(i);
    return -1;
}

int Grammar::word_index(int section, const std::string& word) const {
    const auto& v = vocab.at(section);
    const auto it = std::find(v.begin(), v.end(), word);
    return it == v.end() ? -1 : static_cast<int>(it - v.begin());
}

Grammar Grammar::from_corpus_spec(const corpus::CorpusSpec& spec) {
    spec.validate();
    Grammar g;
    g.n_classes = spec.n_classes();
    g.vocab[0] = corpus::environment_vocabulary(spec);
    g.word_class[0].assign(g.vocab[0].size(), -1);
    for (int s = 1; s <= 2; ++s) {
        for (int c = 0; c < spec.n_classes(); ++c)
            for (const auto& w : corpus::class_keywords(c, s)) {
                g.vocab[s].push_back(w);
                g.word_class[s].push_back(c);
            }
        for (const auto& w : corpus::normal_keywords(s)) {
            g.vocab[s].push_back(w);
            g.word_class[s].push_back(-1);
        }
    }
    for (const auto& combo : corpus::label_combinations(spec)) {
        g.diagnoses.push_back(corpus::combo_labels(combo, spec));
        g.diagnosis_classes.push_back(combo);
    }
    g.validate();
    return g;
}

std::string render_choice(const Grammar& g, const ResponseChoice& c) {
    std::string out;
    for (int s = 0; s < 3; ++s) {
        if (!c.include[s]) continue;
        out += g.schema.headers[s] + ":";
        for (int j = 0; j < g.slots; ++j) {
            const int w = c.words.at(s * g.slots + j);
            CFGRPO_REQUIRE(w >= 0 && w < static_cast<int>(g.vocab[s].size()), "render_choice: word index out of range");
            out += (j == 0 ? " " : ", ") + g.vocab[s][w];
        }
        out += ".\n";
    }
    CFGRPO_REQUIRE(c.diagnosis >= 0 && c.diagnosis < static_cast<int>(g.diagnoses.size()),
                   "render_choice: diagnosis index out of range");
    out += rewards::kDiagnosisMarker + " " + rewards::join_labels(g.diagnoses[c.diagnosis]);
    return out;
}

ResponseChoice parse_choice(const Grammar& g, const rewards::StructuredResponse& r) {
    ResponseChoice c;
    c.include = {0, 0, 0};
    c.words.assign(3 * g.slots, -1);
    c.diagnosis = -1;
    int next_section = 0;
    std::vector<std::string> lines = split_on(r.raw_text, "\n");
    while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
    CFGRPO_REQUIRE(!lines.empty(), "log_prob: empty response is outside the grammar");
    for (size_t li = 0; li < lines.size(); ++li) {
        const std::string line = trim(lines[li]);
        if (line.rfind(rewards::kDiagnosisMarker, 0) == 0) {
            CFGRPO_REQUIRE(li + 1 == lines.size(), "log_prob: diagnosis line must be last");
            const std::string body = trim(line.substr(rewards::kDiagnosisMarker.size()));
            rewards::DiagnosisLabelSet labels;
            for (const auto& tok : split_on(body, ", ")) labels.insert(tok);
            c.diagnosis = g.diagnosis_index(labels);
            CFGRPO_REQUIRE(c.diagnosis >= 0 && rewards::join_labels(labels) == body,
                           "log_prob: diagnosis '" + body + "' is outside the grammar");
            continue;
        }
        int s = -1;
        for (int k = next_section; k < 3; ++k)
            if (line.rfind(g.schema.headers[k] + ": ", 0) == 0) s = k;
        CFGRPO_REQUIRE(s >= 0, "log_prob: line '" + line + "' is outside the grammar");
        std::string body = line.substr(g.schema.headers[s].size() + 2);
        CFGRPO_REQUIRE(!body.empty() && body.back() == '.', "log_prob: section body must end with '.'");
        body.pop_back();
        const auto words = split_on(body, ", ");
        CFGRPO_REQUIRE(words.size() == static_cast<size_t>(g.slots), "log_prob: wrong number of keyword slots");
        for (int j = 0; j < g.slots; ++j) {
            const int w = g.word_index(s, words[j]);
            CFGRPO_REQUIRE(w >= 0, "log_prob: word '" + words[j] + "' is outside the section vocabulary");
            c.words[s * g.slots + j] = w;
        }
        c.include[s] = 1;
        next_section = s + 1;
    }
    CFGRPO_REQUIRE(c.diagnosis >= 0, "log_prob: response has no diagnosis line");
    return c;
}

ResponseChoice choice_from_gold(const Grammar& g, const rewards::KeywordSet& k, const rewards::DiagnosisLabelSet& d) {
    CFGRPO_REQUIRE(g.slots == 3, "choice_from_gold: grammar must have 3 slots per section");
    ResponseChoice c;
    c.words.resize(9);
    for (int s = 0; s < 3; ++s)
        for (int j = 0; j < 3; ++j) {
            c.words[s * 3 + j] = g.word_index(s, k[s][j]);
            CFGRPO_REQUIRE(c.words[s * 3 + j] >= 0, "gold keyword '" + k[s][j] + "' is outside the grammar");
        }
    c.diagnosis = g.diagnosis_index(d);
    CFGRPO_REQUIRE(c.diagnosis >= 0, "gold diagnosis is outside the grammar");
    return c;
}

// ---------------------------------------------------------------------------
// Policy

TemplatePolicy::TemplatePolicy(std::shared_ptr<const Grammar> grammar, int obs_dim, bool tie_evidence)
    : grammar_(std::move(grammar)), obs_dim_(obs_dim), tied_(tie_evidence) {
    CFGRPO_REQUIRE(grammar_ != nullptr && obs_dim >= 1, "policy: need a grammar and a positive observation size");
    grammar_->validate();
    const int cols = obs_dim + 1;
    const auto& g = *grammar_;
    inc_ = add_block("inclusion", 3, cols);
    for (int s = 0; s < 3; ++s)
        slot_[s] = add_block("slots." + std::to_string(s), g.slots * static_cast<int>(g.vocab[s].size()), cols);
    diag_ = add_block("diagnosis", static_cast<int>(g.diagnoses.size()), cols);
    if (tied_ && g.n_classes > 0) evid_ = add_block("evidence", g.n_classes, cols);
    else tied_ = false;
    frozen_.assign(params_.size(), 0);
    for (int k = 0; k < cols; ++k) frozen_[diag_ + k] = 1;
}

size_t TemplatePolicy::add_block(const std::string& name, int rows, int cols) {
    ParamBlock b{name, rows, cols, params_.size()};
    blocks_.push_back(b);
    params_.resize(params_.size() + static_cast<size_t>(rows) * cols, 0.0);
    return b.offset;
}

const ParamBlock& TemplatePolicy::block(const std::string& name) const {
    for (const auto& b : blocks_)
        if (b.name == name) return b;
    throw ContractViolation("policy: no parameter block named " + name);
}

void TemplatePolicy::init_random(uint64_t seed, double scale) {
    Rng rng(seed);
    for (size_t i = 0; i < params_.size(); ++i) params_[i] = frozen_[i] ? 0.0 : scale * rng.normal();
}

void TemplatePolicy::zero_frozen(std::vector<double>& grad) const {
    for (size_t i = 0; i < grad.size(); ++i)
        if (frozen_[i]) grad[i] = 0.0;
}

Logits TemplatePolicy::logits(const Observation& obs) const {
    CFGRPO_REQUIRE(static_cast<int>(obs.size()) == obs_dim_, "policy: observation size mismatch");
    const auto& g = *grammar_;
    const int cols = obs_dim_ + 1;
    auto row = [&](size_t off, int r) {
        const double* w = &params_[off + static_cast<size_t>(r) * cols];
        double t = w[obs_dim_];
        for (int k = 0; k < obs_dim_; ++k) t += w[k] * obs[k];
        return t;
    };
    std::vector<double> ev(g.n_classes, 0.0);
    if (tied_)
        for (int c = 0; c < g.n_classes; ++c) ev[c] = row(evid_, c);
    Logits l;
    for (int s = 0; s < 3; ++s) {
        l.include[s] = row(inc_, s);
        const int v = static_cast<int>(g.vocab[s].size());
        l.slot[s].resize(static_cast<size_t>(g.slots) * v);
        for (int j = 0; j < g.slots; ++j)
            for (int w = 0; w < v; ++w) {
                double t = row(slot_[s], j * v + w);
                if (tied_ && g.word_class[s][w] >= 0) t += ev[g.word_class[s][w]];
                l.slot[s][j * v + w] = t;
            }
    }
    l.diagnosis.resize(g.diagnoses.size());
    for (size_t i = 0; i < g.diagnoses.size(); ++i) {
        double t = row(diag_, static_cast<int>(i));
        if (tied_)
            for (int c : g.diagnosis_classes[i]) t += ev[c];
        l.diagnosis[i] = t;
    }
    return l;
}

void TemplatePolicy::backprop(const Observation& obs, const Logits& dl, double scale, std::vector<double>& grad) const {
    CFGRPO_REQUIRE(grad.size() == params_.size(), "policy: gradient size mismatch");
    const auto& g = *grammar_;
    const int cols = obs_dim_ + 1;
    auto acc = [&](size_t off, int r, double d) {
        if (d == 0.0) return;
        double* gw = &grad[off + static_cast<size_t>(r) * cols];
        const double a = scale * d;
        for (int k = 0; k < obs_dim_; ++k) gw[k] += a * obs[k];
        gw[obs_dim_] += a;
    };
    std::vector<double> dev(g.n_classes, 0.0);
    for (int s = 0; s < 3; ++s) {
        acc(inc_, s, dl.include[s]);
        const int v = static_cast<int>(g.vocab[s].size());
        for (int j = 0; j < g.slots; ++j)
            for (int w = 0; w < v; ++w) {
                const double d = dl.slot[s][j * v + w];
                acc(slot_[s], j * v + w, d);
                if (tied_ && g.word_class[s][w] >= 0) dev[g.word_class[s][w]] += d;
            }
    }
    for (size_t i = 0; i < g.diagnoses.size(); ++i) {
        if (i > 0) acc(diag_, static_cast<int>(i), dl.diagnosis[i]);
        if (tied_)
            for (int c : g.diagnosis_classes[i]) dev[c] += dl.diagnosis[i];
    }
    if (tied_)
        for (int c = 0; c < g.n_classes; ++c) acc(evid_, c, dev[c]);
}

Distribution distribution(const TemplatePolicy& p, const Observation& obs) {
    const Logits l = p.logits(obs);
    Distribution d;
    for (int s = 0; s < 3; ++s) {
        d.log_include[s] = log_sigmoid(l.include[s]);
        d.log_exclude[s] = log_sigmoid(-l.include[s]);
        d.p_include[s] = std::exp(d.log_include[s]);
        const size_t v = p.grammar().vocab[s].size();
        d.slot[s].resize(l.slot[s].size());
        d.log_slot[s].resize(l.slot[s].size());
        for (int j = 0; j < p.grammar().slots; ++j)
            softmax(&l.slot[s][j * v], v, &d.slot[s][j * v], &d.log_slot[s][j * v]);
    }
    d.diagnosis.resize(l.diagnosis.size());
    d.log_diagnosis.resize(l.diagnosis.size());
    softmax(l.diagnosis.data(), l.diagnosis.size(), d.diagnosis.data(), d.log_diagnosis.data());
    return d;
}

ResponseChoice sample_choice(const Distribution& d, const Grammar& g, Rng& rng) {
    ResponseChoice c;
    c.words.assign(3 * g.slots, -1);
    for (int s = 0; s < 3; ++s) {
        c.include[s] = rng.uniform() < d.p_include[s] ? 1 : 0;
        if (!c.include[s]) continue;
        const size_t v = g.vocab[s].size();
        for (int j = 0; j < g.slots; ++j) c.words[s * g.slots + j] = sample_index(&d.slot[s][j * v], v, rng.uniform());
    }
    c.diagnosis = sample_index(d.diagnosis.data(), d.diagnosis.size(), rng.uniform());
    return c;
}

ResponseChoice greedy_choice(const Distribution& d, const Grammar& g) {
    ResponseChoice c;
    c.words.assign(3 * g.slots, -1);
    for (int s = 0; s < 3; ++s) {
        c.include[s] = d.p_include[s] >= 0.5 ? 1 : 0;
        if (!c.include[s]) continue;
        const size_t v = g.vocab[s].size();
        for (int j = 0; j < g.slots; ++j) c.words[s * g.slots + j] = argmax(&d.slot[s][j * v], v);
    }
    c.diagnosis = argmax(d.diagnosis.data(), d.diagnosis.size());
    return c;
}

double log_prob(const Distribution& d, const Grammar& g, const ResponseChoice& c) {
    CFGRPO_REQUIRE(c.words.size() == static_cast<size_t>(3 * g.slots), "log_prob: malformed choice");
    CFGRPO_REQUIRE(c.diagnosis >= 0 && c.diagnosis < static_cast<int>(d.diagnosis.size()),
                   "log_prob: diagnosis outside the grammar");
    double lp = 0.0;
    for (int s = 0; s < 3; ++s) {
        if (!c.include[s]) {
            lp += d.log_exclude[s];
            continue;
        }
        lp += d.log_include[s];
        const int v = static_cast<int>(g.vocab[s].size());
        for (int j = 0; j < g.slots; ++j) {
            const int w = c.words[s * g.slots + j];
            CFGRPO_REQUIRE(w >= 0 && w < v, "log_prob: word outside the grammar");
            lp += d.log_slot[s][j * v + w];
        }
    }
    return lp + d.log_diagnosis[c.diagnosis];
}

double log_prob(const TemplatePolicy& p, const Observation& obs, const ResponseChoice& c) {
    return log_prob(distribution(p, obs), p.grammar(), c);
}

double log_prob(const TemplatePolicy& p, const Observation& obs, const rewards::StructuredResponse& r) {
    return log_prob(p, obs, parse_choice(p.grammar(), r));
}

Logits log_prob_logit_grad(const Distribution& d, const Grammar& g, const ResponseChoice& c) {
    Logits dl;
    for (int s = 0; s < 3; ++s) {
        dl.include[s] = (c.include[s] ? 1.0 : 0.0) - d.p_include[s];
        dl.slot[s].assign(d.slot[s].size(), 0.0);
        if (!c.include[s]) continue;
        const int v = static_cast<int>(g.vocab[s].size());
        for (int j = 0; j < g.slots; ++j) {
            for (int w = 0; w < v; ++w) dl.slot[s][j * v + w] = -d.slot[s][j * v + w];
            dl.slot[s][j * v + c.words[s * g.slots + j]] += 1.0;
        }
    }
    dl.diagnosis.resize(d.diagnosis.size());
    for (size_t i = 0; i < d.diagnosis.size(); ++i) dl.diagnosis[i] = -d.diagnosis[i];
    dl.diagnosis[c.diagnosis] += 1.0;
    return dl;
}

namespace {

double categorical_kl(const double* p, const double* lp, const double* lq, size_t n) {
    double k = 0.0;
    for (size_t i = 0; i < n; ++i)
        if (p[i] > 0.0) k += p[i] * (lp[i] - lq[i]);
    return k;
}

double bernoulli_kl(const Distribution& p, const Distribution& q, int s) {
    const double a = p.p_include[s];
    return a * (p.log_include[s] - q.log_include[s]) + (1.0 - a) * (p.log_exclude[s] - q.log_exclude[s]);
}

} // namespace

double kl_divergence(const Distribution& p, const Distribution& q, const Grammar& g) {
    double kl = 0.0;
    for (int s = 0; s < 3; ++s) {
        const size_t v = g.vocab[s].size();
        double slots = 0.0;
        for (int j = 0; j < g.slots; ++j)
            slots += categorical_kl(&p.slot[s][j * v], &p.log_slot[s][j * v], &q.log_slot[s][j * v], v);
        kl += bernoulli_kl(p, q, s) + p.p_include[s] * slots;
    }
    kl += categorical_kl(p.diagnosis.data(), p.log_diagnosis.data(), q.log_diagnosis.data(), p.diagnosis.size());
    return std::max(kl, 0.0);
}

double kl_divergence(const TemplatePolicy& p, const TemplatePolicy& ref, const Observation& obs) {
    CFGRPO_REQUIRE(p.params().size() == ref.params().size(), "kl_divergence: policies have different shapes");
    return kl_divergence(distribution(p, obs), distribution(ref, obs), p.grammar());
}

Logits kl_logit_grad(const Distribution& p, const Distribution& q, const Grammar& g) {
    Logits dl;
    for (int s = 0; s < 3; ++s) {
        const size_t v = g.vocab[s].size();
        const double a = p.p_include[s];
        dl.slot[s].assign(p.slot[s].size(), 0.0);
        double slots = 0.0;
        for (int j = 0; j < g.slots; ++j) {
            const size_t o = j * v;
            const double kj = categorical_kl(&p.slot[s][o], &p.log_slot[s][o], &q.log_slot[s][o], v);
            slots += kj;
            for (size_t w = 0; w < v; ++w)
                dl.slot[s][o + w] = a * p.slot[s][o + w] * (p.log_slot[s][o + w] - q.log_slot[s][o + w] - kj);
        }
        const double dlog = (p.log_include[s] - q.log_include[s]) - (p.log_exclude[s] - q.log_exclude[s]);
        dl.include[s] = a * (1.0 - a) * (dlog + slots);
    }
    const double kd = categorical_kl(p.diagnosis.data(), p.log_diagnosis.data(), q.log_diagnosis.data(),
                                     p.diagnosis.size());
    dl.diagnosis.resize(p.diagnosis.size());
    for (size_t i = 0; i < p.diagnosis.size(); ++i)
        dl.diagnosis[i] = p.diagnosis[i] * (p.log_diagnosis[i] - q.log_diagnosis[i] - kd);
    return dl;
}

std::vector<ResponseChoice> enumerate_choices(const Grammar& g, size_t limit) {
    std::vector<std::vector<std::vector<int>>> per_section(3);  // options: empty = excluded
    size_t total = g.diagnoses.size();
    for (int s = 0; s < 3; ++s) {
        per_section[s].push_back({});
        const int v = static_cast<int>(g.vocab[s].size());
        std::vector<int> cur(g.slots, 0);
        for (;;) {
            per_section[s].push_back(cur);
            int k = g.slots - 1;
            while (k >= 0 && ++cur[k] == v) cur[k--] = 0;
            if (k < 0) break;
        }
        total *= per_section[s].size();
        CFGRPO_REQUIRE(total <= limit, "enumerate_choices: grammar too large to enumerate");
    }
    std::vector<ResponseChoice> out;
    for (const auto& a : per_section[0])
        for (const auto& b : per_section[1])
            for (const auto& c : per_section[2])
                for (size_t d = 0; d < g.diagnoses.size(); ++d) {
                    ResponseChoice ch;
                    ch.words.assign(3 * g.slots, -1);
                    const std::vector<int>* parts[3] = {&a, &b, &c};
                    for (int s = 0; s < 3; ++s) {
                        ch.include[s] = parts[s]->empty() ? 0 : 1;
                        for (int j = 0; j < static_cast<int>(parts[s]->size()); ++j)
                            ch.words[s * g.slots + j] = (*parts[s])[j];
                    }
                    ch.diagnosis = static_cast<int>(d);
                    out.push_back(ch);
                }
    return out;
}

} // namespace cfgrpo::grpo
