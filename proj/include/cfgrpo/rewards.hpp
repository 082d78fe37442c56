// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace cfgrpo::rewards {

struct SectionSchema {
    std::array<std::string, 3> headers{"Location & Imaging Environment", "Mucosal Morphology & Focal Lesions",
                                       "Surface Texture & Microvascular Architecture"};
    void validate() const;
};

struct StructuredResponse {
    std::string raw_text;
    std::vector<std::pair<std::string, std::string>> sections;
    std::optional<std::string> diagnosis_line;

    static StructuredResponse parse(const std::string& text);
};

using KeywordSet = std::array<std::array<std::string, 3>, 3>;

// Canonical label set: lowercase, trimmed, sorted, deduplicated.
using DiagnosisLabelSet = std::set<std::string>;

struct RewardWeights {
    double w_fmt = 1.0;
    double w_cog = 1.0;
    double w_diag = 2.0;
    void validate() const;
};

struct RewardBreakdown {
    double r_fmt = 0.0;
    double r_cog = 0.0;
    double r_diag = 0.0;
    double total = 0.0;
};

inline const std::string kDiagnosisMarker = "Diagnosis:";

std::string normalize_whitespace(const std::string& s);
std::string to_lower(std::string s);
std::string canonical_label(const std::string& s);
DiagnosisLabelSet canonical_set(const std::vector<std::string>& labels);
std::string join_labels(const DiagnosisLabelSet& s, const std::string& sep = ", ");

double format_reward(const StructuredResponse& r, const SectionSchema& schema, bool strict_order = false);
double cognition_reward(const StructuredResponse& r, const std::vector<std::string>& keywords);
double cognition_reward(const StructuredResponse& r, const KeywordSet& keywords);
double diagnosis_reward(const DiagnosisLabelSet& predicted, const DiagnosisLabelSet& gold);
DiagnosisLabelSet extract_diagnosis(const StructuredResponse& r, const std::set<std::string>& label_vocabulary);
RewardBreakdown total_reward(double r_fmt, double r_cog, double r_diag, const RewardWeights& w = {});

// Full scoring of one response against its gold context.
struct RewardContext {
    KeywordSet keywords;
    DiagnosisLabelSet gold;
};

RewardBreakdown score_response(const StructuredResponse& r, const RewardContext& ctx,
                               const std::set<std::string>& vocabulary, const RewardWeights& w,
                               const SectionSchema& schema = {}, bool strict_order = false);

std::vector<std::string> flatten(const KeywordSet& k);

} // namespace cfgrpo::rewards
