// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"

#include "cfgrpo/error.hpp"
#include "cfgrpo/rewards.hpp"

using namespace cfgrpo::rewards;

namespace {

const std::string kH0 = "Location & Imaging Environment";
const std::string kH1 = "Mucosal Morphology & Focal Lesions";
const std::string kH2 = "Surface Texture & Microvascular Architecture";

const KeywordSet kKeys{{{"colon", "bright lumen", "clear view"},
                        {"raised", "round", "pedunculated"},
                        {"smooth", "regular vessels", "glossy"}}};

std::string full_response(const std::string& diag) {
    return kH0 + ": colon, bright lumen, clear view\n" + kH1 + ": raised round pedunculated mass\n" + kH2 +
           ": smooth surface with regular vessels, glossy\nDiagnosis: " + diag;
}

const std::set<std::string> kVocab{"polyp", "polyps", "ulcer", "erosion", "angiodysplasia", "normal"};

} // namespace

TEST_CASE("format reward") {
    CHECK(format_reward(StructuredResponse::parse(full_response("polyp")), {}) == 1.0);
    CHECK(format_reward(StructuredResponse::parse(""), {}) == 0.0);
    CHECK(format_reward(StructuredResponse::parse(kH0 + ": a\n" + kH2 + ": b"), {}) == 0.0);
    // whitespace collapsing applies to the text and the header
    CHECK(format_reward(StructuredResponse::parse("Location  &\tImaging\nEnvironment " + kH1 + " " + kH2), {}) == 1.0);
    // case sensitive
    CHECK(format_reward(StructuredResponse::parse(to_lower(full_response("polyp"))), {}) == 0.0);

    const auto reversed = StructuredResponse::parse(kH2 + ": x\n" + kH1 + ": y\n" + kH0 + ": z");
    CHECK(format_reward(reversed, {}, false) == 1.0);
    CHECK(format_reward(reversed, {}, true) == 0.0);
    CHECK(format_reward(StructuredResponse::parse(full_response("polyp")), {}, true) == 1.0);

    SUBCASE("monotone under extension") {
        const std::string base = full_response("ulcer");
        for (const std::string& extra : std::vector<std::string>{"", " more", "\nDiagnosis: polyp", kH0, "\n\n"})
            CHECK(format_reward(StructuredResponse::parse(base + extra), {}) == 1.0);
    }
}

TEST_CASE("cognition reward") {
    CHECK(cognition_reward(StructuredResponse::parse(full_response("polyp")), kKeys) == 1.0);
    CHECK(cognition_reward(StructuredResponse::parse("nothing relevant"), kKeys) == 0.0);
    CHECK(cognition_reward(StructuredResponse::parse("COLON, Raised and   Smooth"), kKeys) ==
          doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    // whitespace in keywords and text are normalized the same way
    CHECK(cognition_reward(StructuredResponse::parse("bright\n lumen"), kKeys) == doctest::Approx(1.0 / 9.0));
    std::vector<std::string> eight(8, "x");
    CHECK_THROWS_AS(cognition_reward(StructuredResponse::parse("x"), eight), cfgrpo::ContractViolation);

    SUBCASE("always a multiple of one ninth and monotone") {
        std::string text;
        double prev = 0;
        for (const auto& k : flatten(kKeys)) {
            text += " " + k;
            const double r = cognition_reward(StructuredResponse::parse(text), kKeys);
            CHECK(r >= prev);
            CHECK(std::abs(r * 9 - std::round(r * 9)) < 1e-12);
            prev = r;
        }
        CHECK(prev == 1.0);
    }
}

TEST_CASE("diagnosis reward") {
    CHECK(diagnosis_reward({"polyp"}, {"polyp"}) == 1.0);
    CHECK(diagnosis_reward({"polyp", "erosion"}, {"polyp"}) == 0.0);
    CHECK(diagnosis_reward({"erosion", "polyp"}, {"polyp", "erosion"}) == 1.0);
    CHECK(diagnosis_reward({}, {"polyp"}) == 0.0);
    CHECK(diagnosis_reward({"polyp"}, {"erosion"}) == diagnosis_reward({"erosion"}, {"polyp"}));
}

TEST_CASE("extract diagnosis fixture table") {
    struct Row {
        std::string text;
        DiagnosisLabelSet expected;
    };
    const std::vector<Row> table{
        {"findings\nDiagnosis: polyps", {"polyps"}},
        {"no conclusion at all", {}},
        {"Diagnosis: Erosion, angiodysplasia", {"erosion", "angiodysplasia"}},
        {"Diagnosis: ulcer; erosion", {"ulcer", "erosion"}},
        {"Diagnosis: POLYP", {"polyp"}},
        {"Diagnosis:   polyp  ,  ulcer  ", {"polyp", "ulcer"}},
        {"Diagnosis: polyp.", {"polyp"}},
        {"Diagnosis: tumour", {}},
        {"Diagnosis: polyp, tumour", {"polyp"}},
        {"Diagnosis: ", {}},
        {"Diagnosis: normal", {"normal"}},
        {"Diagnosis: ulcer\nDiagnosis: polyp", {"polyp"}},
        {"Diagnosis: polyp\nsome trailing text", {"polyp"}},
        {"   Diagnosis: erosion", {"erosion"}},
        {"diagnosis: erosion", {}},
        {"The Diagnosis: erosion", {}},
        {"Diagnosis: polyp, polyp", {"polyp"}},
        {"Diagnosis: angio dysplasia", {}},
        {"Diagnosis: ulcer,erosion,angiodysplasia,polyp", {"ulcer", "erosion", "angiodysplasia", "polyp"}},
        {"Diagnosis: polyp and ulcer", {}},
        {"Diagnosis: Ulcer\r\n", {"ulcer"}},
        {full_response("erosion, ulcer"), {"erosion", "ulcer"}},
    };
    REQUIRE(table.size() >= 20);
    for (const auto& row : table) {
        CAPTURE(row.text);
        CHECK(extract_diagnosis(StructuredResponse::parse(row.text), kVocab) == row.expected);
    }
    CHECK_THROWS_AS(extract_diagnosis(StructuredResponse::parse("Diagnosis: polyp"), {}), cfgrpo::ContractViolation);
}

TEST_CASE("total reward") {
    CHECK(total_reward(1, 1.0, 1).total == 4.0);
    CHECK(total_reward(0, 0, 0).total == 0.0);
    CHECK(total_reward(1, 4.0 / 9.0, 0).total == doctest::Approx(1.444).epsilon(1e-3));
    RewardWeights w{2.0, 0.5, 1.0};
    const auto b = total_reward(1, 1, 1, w);
    CHECK(b.total == 3.5);
    CHECK(b.r_fmt == 1);
    CHECK_THROWS_AS((RewardWeights{-1, 1, 1}.validate()), cfgrpo::ConfigError);
}

TEST_CASE("score response end to end") {
    RewardContext ctx{kKeys, {"polyp"}};
    const auto good = score_response(StructuredResponse::parse(full_response("polyp")), ctx, kVocab, {});
    CHECK(good.total == 4.0);
    const auto wrong = score_response(StructuredResponse::parse(full_response("polyp, ulcer")), ctx, kVocab, {});
    CHECK(wrong.total == 2.0);
    const auto bare = score_response(StructuredResponse::parse("colon, raised, smooth"), ctx, kVocab, {});
    CHECK(bare.r_fmt == 0.0);
    CHECK(bare.r_cog == doctest::Approx(1.0 / 3.0));
    CHECK(bare.total == doctest::Approx(1.0 / 3.0));
    // pure function
    CHECK(score_response(StructuredResponse::parse(full_response("polyp")), ctx, kVocab, {}).total == good.total);
}

TEST_CASE("parse and canonicalization helpers") {
    const auto r = StructuredResponse::parse(full_response("polyp"));
    REQUIRE(r.sections.size() == 3);
    CHECK(r.sections[0].first == kH0);
    REQUIRE(r.diagnosis_line.has_value());
    CHECK(*r.diagnosis_line == "Diagnosis: polyp");
    CHECK(normalize_whitespace("  a \t b\n c  ") == "a b c");
    CHECK(canonical_label("  Angio  Dysplasia ") == "angio dysplasia");
    CHECK(canonical_set({"B", "a", " a ", ""}) == DiagnosisLabelSet{"a", "b"});
    CHECK(join_labels({"b", "a"}) == "a, b");
}
