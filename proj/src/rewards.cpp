// SPDX-License-Identifier: Apache-2.0
#include "cfgrpo/rewards.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "cfgrpo/error.hpp"

namespace cfgrpo::rewards {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::string cur;
    for (char ch : text) {
        if (ch == '\n') {
            lines.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    lines.push_back(cur);
    return lines;
}

bool starts_with(const std::string& s, const std::string& prefix) {
    return s.size() >= prefix.size() && s.compare(0, prefix.size(), prefix) == 0;
}

} // namespace

void SectionSchema::validate() const {
    for (size_t i = 0; i < headers.size(); ++i) {
        CFGRPO_REQUIRE(!normalize_whitespace(headers[i]).empty(), "section schema: empty header");
        for (size_t j = i + 1; j < headers.size(); ++j)
            CFGRPO_REQUIRE(headers[i] != headers[j], "section schema: duplicate header");
    }
}

void RewardWeights::validate() const {
    if (!(w_fmt >= 0 && w_cog >= 0 && w_diag >= 0)) throw ConfigError("reward weights must be nonnegative");
}

std::string normalize_whitespace(const std::string& s) {
    std::string out;
    bool pending = false;
    for (char ch : s) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            pending = !out.empty();
        } else {
            if (pending) out.push_back(' ');
            pending = false;
            out.push_back(ch);
        }
    }
    return out;
}

std::string to_lower(std::string s) {
    for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
}

std::string canonical_label(const std::string& s) { return to_lower(normalize_whitespace(s)); }

DiagnosisLabelSet canonical_set(const std::vector<std::string>& labels) {
    DiagnosisLabelSet out;
    for (const auto& l : labels) {
        auto c = canonical_label(l);
        if (!c.empty()) out.insert(c);
    }
    return out;
}

std::string join_labels(const DiagnosisLabelSet& s, const std::string& sep) {
    std::string out;
    for (const auto& l : s) {
        if (!out.empty()) out += sep;
        out += l;
    }
    return out;
}

StructuredResponse StructuredResponse::parse(const std::string& text) {
    StructuredResponse r;
    r.raw_text = text;
    for (const auto& raw : split_lines(text)) {
        const std::string line = trim(raw);
        if (starts_with(line, kDiagnosisMarker)) {
            r.diagnosis_line = line;
            continue;
        }
        const auto colon = line.find(':');
        if (colon == std::string::npos || colon == 0) continue;
        r.sections.emplace_back(trim(line.substr(0, colon)), trim(line.substr(colon + 1)));
    }
    return r;
}

double format_reward(const StructuredResponse& r, const SectionSchema& schema, bool strict_order) {
    const std::string text = normalize_whitespace(r.raw_text);
    size_t last = 0;
    bool first = true;
    for (const auto& h : schema.headers) {
        const auto pos = text.find(normalize_whitespace(h));
        if (pos == std::string::npos) return 0.0;
        if (strict_order) {
            if (!first && pos <= last) return 0.0;
            last = pos;
            first = false;
        }
    }
    return 1.0;
}

double cognition_reward(const StructuredResponse& r, const std::vector<std::string>& keywords) {
    CFGRPO_REQUIRE(keywords.size() == 9, "cognition_reward: keyword set must have exactly 9 entries");
    const std::string text = to_lower(normalize_whitespace(r.raw_text));
    int hits = 0;
    for (const auto& k : keywords) {
        const std::string key = to_lower(normalize_whitespace(k));
        CFGRPO_REQUIRE(!key.empty(), "cognition_reward: empty keyword");
        if (text.find(key) != std::string::npos) ++hits;
    }
    return hits / 9.0;
}

double cognition_reward(const StructuredResponse& r, const KeywordSet& keywords) {
    return cognition_reward(r, flatten(keywords));
}

double diagnosis_reward(const DiagnosisLabelSet& predicted, const DiagnosisLabelSet& gold) {
    return predicted == gold ? 1.0 : 0.0;
}

DiagnosisLabelSet extract_diagnosis(const StructuredResponse& r, const std::set<std::string>& label_vocabulary) {
    CFGRPO_REQUIRE(!label_vocabulary.empty(), "extract_diagnosis: empty vocabulary");
    std::optional<std::string> last;
    for (const auto& raw : split_lines(r.raw_text)) {
        const std::string line = trim(raw);
        if (starts_with(line, kDiagnosisMarker)) last = line;
    }
    DiagnosisLabelSet out;
    if (!last) return out;
    std::set<std::string> vocab;
    for (const auto& v : label_vocabulary) vocab.insert(canonical_label(v));
    std::string token;
    auto flush = [&]() {
        auto c = canonical_label(token);
        if (!c.empty() && c.back() == '.') c = canonical_label(c.substr(0, c.size() - 1));
        if (vocab.count(c)) out.insert(c);
        token.clear();
    };
    for (char ch : last->substr(kDiagnosisMarker.size())) {
        if (ch == ',' || ch == ';')
            flush();
        else
            token.push_back(ch);
    }
    flush();
    return out;
}

RewardBreakdown total_reward(double r_fmt, double r_cog, double r_diag, const RewardWeights& w) {
    RewardBreakdown b;
    b.r_fmt = r_fmt;
    b.r_cog = r_cog;
    b.r_diag = r_diag;
    b.total = w.w_fmt * r_fmt + w.w_cog * r_cog + w.w_diag * r_diag;
    return b;
}

RewardBreakdown score_response(const StructuredResponse& r, const RewardContext& ctx,
                               const std::set<std::string>& vocabulary, const RewardWeights& w,
                               const SectionSchema& schema, bool strict_order) {
    return total_reward(format_reward(r, schema, strict_order), cognition_reward(r, ctx.keywords),
                        diagnosis_reward(extract_diagnosis(r, vocabulary), ctx.gold), w);
}

std::vector<std::string> flatten(const KeywordSet& k) {
    std::vector<std::string> out;
    for (const auto& g : k)
        for (const auto& s : g) out.push_back(s);
    return out;
}

} // namespace cfgrpo::rewards
