// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "oculus/cohort/cohort.hpp"
#include "oculus/core/io.hpp"
#include "oculus/report/dsl.hpp"
#include "oculus/report/engine.hpp"
#include "oculus/report/tokenizer.hpp"

using namespace oculus;
using namespace oculus::report;

namespace {

std::size_t finding_position(const ReportAST& ast, std::string_view name) {
  for (std::size_t i = 0; i < ast.findings.size(); ++i)
    if (ast.findings[i].biomarker == name) return i;
  return ast.findings.size();
}

/// Random report with a random biomarker vector and label.
ReportAST random_report(std::uint64_t seed) {
  Rng rng(seed);
  const auto label = kAllLabels[rng.below(kNumLabels)];
  const auto b = sample_biomarkers(label, rng);
  // Occasionally use a label the biomarkers do not support.
  const auto g = rng.uniform() < 0.2 ? kAllLabels[rng.below(kNumLabels)] : label;
  auto ast = eye_guideline_report(b, g, default_rules());
  if (rng.uniform() < 0.1) ast.free_text = "reviewed by grader";
  return ast;
}

ParseError parse_error_of(std::string_view text) {
  try {
    (void)parse_report(text);
  } catch (const ParseError& e) {
    return e;
  }
  ADD_FAILURE() << "no parse error for: " << text;
  return ParseError(0, 0, {}, "none");
}

}  // namespace

TEST(Rules, DefaultTableValidates) { EXPECT_NO_THROW(default_rules().validate()); }

TEST(Rules, PublishedJsonMatchesDefaultTable) {
  const auto text = io::read_file(std::filesystem::path(OCULUS_DATA_DIR) / "eye_guideline_rules.json");
  const auto loaded = rules_from_json(nlohmann::json::parse(text));
  EXPECT_EQ(rules_to_json(loaded), rules_to_json(default_rules()));
}

TEST(Rules, PatternsFollowClassShiftDirections) {
  const auto rules = default_rules();
  for (std::size_t k = 1; k < kNumLabels; ++k) {
    const auto& rule = rules.rule_for(kAllLabels[k]);
    for (const auto& term : rule.pattern) {
      const double shift = biomarker_spec(biomarker_index(term.biomarker)).shift_for(kAllLabels[k]);
      EXPECT_EQ(term.required, shift > 0 ? Flag::high : Flag::low) << term.biomarker;
    }
  }
}

TEST(Rules, RejectsInvertedRangeAndMissingDisease) {
  auto r = default_rules();
  r.ranges[3].low = r.ranges[3].high;
  EXPECT_THROW(r.validate(), ValidationError);
  r = default_rules();
  r.diseases.pop_back();
  EXPECT_THROW(r.validate(), ValidationError);
  r = default_rules();
  r.priority.pop_back();
  EXPECT_THROW(r.validate(), ValidationError);
}

TEST(Engine, MidpointsWithNormalLabelGiveAllNormalNarrative) {
  const auto ast = eye_guideline_report(BiomarkerVector::midpoints(), DiagnosisLabel::Normal, default_rules());
  for (const auto& f : ast.findings) EXPECT_EQ(f.flag, Flag::normal) << f.biomarker;
  ASSERT_EQ(ast.inferences.size(), 1u);
  EXPECT_EQ(ast.inferences[0].template_id, kNormalTemplate);
  EXPECT_EQ(ast.diagnosis, DiagnosisLabel::Normal);
}

TEST(Engine, GlaucomaPatternCitesExactlyTheMatchingFindings) {
  auto b = BiomarkerVector::midpoints();
  b[biomarker_index("cup_disc_ratio")] = 0.75;  // above 0.60
  b[biomarker_index("rnfl_superior")] = 85.0;   // below 98
  b[biomarker_index("rnfl_inferior")] = 90.0;   // below 100
  b[biomarker_index("rnfl_average")] = 70.0;    // below 80
  const auto ast = eye_guideline_report(b, DiagnosisLabel::Glaucoma, default_rules());
  EXPECT_EQ(ast.findings[finding_position(ast, "cup_disc_ratio")].flag, Flag::high);
  EXPECT_EQ(ast.findings[finding_position(ast, "rnfl_superior")].flag, Flag::low);
  EXPECT_EQ(ast.findings[finding_position(ast, "rnfl_inferior")].flag, Flag::low);
  EXPECT_EQ(ast.findings[finding_position(ast, "rnfl_average")].flag, Flag::low);
  std::vector<std::size_t> expected{finding_position(ast, "rnfl_average"), finding_position(ast, "rnfl_superior"),
                                    finding_position(ast, "rnfl_inferior"), finding_position(ast, "cup_disc_ratio")};
  std::sort(expected.begin(), expected.end());
  ASSERT_EQ(ast.inferences.size(), 1u);
  EXPECT_EQ(ast.inferences[0].template_id, "glaucomatous_optic_neuropathy");
  EXPECT_EQ(ast.inferences[0].citations, expected);
  EXPECT_EQ(ast.diagnosis, DiagnosisLabel::Glaucoma);
}

TEST(Engine, SilentImagingWithDiseaseLabelIsMarkedLabelDriven) {
  const auto ast = eye_guideline_report(BiomarkerVector::midpoints(), DiagnosisLabel::Glaucoma, default_rules());
  ASSERT_EQ(ast.inferences.size(), 1u);
  EXPECT_EQ(ast.inferences[0].template_id, kLabelDrivenTemplate);
  EXPECT_EQ(ast.diagnosis, DiagnosisLabel::Glaucoma);
  // Cites every designated glaucoma marker.
  EXPECT_EQ(ast.inferences[0].citations.size(), default_rules().rule_for(DiagnosisLabel::Glaucoma).pattern.size());
}

TEST(Engine, UnknownBiomarkerInRuleIsAnError) {
  auto r = default_rules();
  r.diseases[3].pattern[0].biomarker = "retinal_mood";
  EXPECT_THROW(eye_guideline_report(BiomarkerVector::midpoints(), r.diseases[3].disease, r), ValidationError);
}

TEST(Engine, GroundingAndConsistencyHoldOverRandomInputs) {
  const auto rules = default_rules();
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    const auto g = kAllLabels[rng.below(kNumLabels)];
    const auto b = sample_biomarkers(kAllLabels[rng.below(kNumLabels)], rng);
    const auto ast = eye_guideline_report(b, g, rules);
    EXPECT_EQ(ast, eye_guideline_report(b, g, rules));
    EXPECT_EQ(ast.diagnosis, g);
    EXPECT_NO_THROW(ast.validate());
    for (const auto& f : ast.findings) {
      const auto idx = biomarker_index(f.biomarker);
      EXPECT_EQ(f.flag, rules.flag(idx, b[idx]));
    }
    for (const auto& s : ast.inferences) {
      ASSERT_FALSE(s.citations.empty());
      const bool narrative = s.template_id == kNormalTemplate || s.template_id == kLabelDrivenTemplate;
      for (auto c : s.citations) {
        ASSERT_LT(c, ast.findings.size());
        if (!narrative) {
          EXPECT_NE(ast.findings[c].flag, Flag::normal) << "seed " << seed;
        }
        if (s.template_id == kNormalTemplate) {
          EXPECT_EQ(ast.findings[c].flag, Flag::normal) << "seed " << seed;
        }
      }
    }
  }
}

TEST(Dsl, MinimalReportIsOneLine) {
  ReportAST ast;
  ast.diagnosis = DiagnosisLabel::Normal;
  const auto text = report_to_text(ast);
  EXPECT_EQ(text, "DIAGNOSIS Normal");
  EXPECT_EQ(parse_report(text), ast);
}

TEST(Dsl, RoundTripOverGeneratedReports) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto ast = random_report(seed);
    EXPECT_EQ(parse_report(report_to_text(ast)), ast) << "seed " << seed;
  }
}

TEST(Dsl, AcceptsOneTrailingNewline) {
  EXPECT_EQ(parse_report("DIAGNOSIS AMD\n").diagnosis, DiagnosisLabel::AMD);
  EXPECT_THROW(parse_report("DIAGNOSIS AMD\n\n"), ParseError);
}

TEST(Dsl, DanglingIndexNamesTheIndex) {
  const auto e = parse_error_of("FINDING cup_disc_ratio 0.70 unitless high\nINFER glaucomatous_optic_neuropathy 0,7\n"
                                "DIAGNOSIS Glaucoma");
  EXPECT_EQ(e.line(), 2u);
  EXPECT_EQ(e.column(), 39u);
  EXPECT_NE(std::string(e.what()).find("index 7"), std::string::npos);
}

TEST(Dsl, ReportsExpectedTokensAndPositions) {
  auto e = parse_error_of("");
  EXPECT_EQ(e.line(), 1u);
  EXPECT_EQ(e.expected(), (std::vector<std::string>{"FINDING", "INFER", "NOTE", "DIAGNOSIS"}));

  e = parse_error_of("INFER within_reference_limits 0\nDIAGNOSIS Normal");
  EXPECT_NE(std::string(e.what()).find("dangling"), std::string::npos);

  e = parse_error_of("FINDING mt_central 250.00 um normal\nINFER within_reference_limits 0\n"
                     "FINDING mt_average 280.00 um normal\nDIAGNOSIS Normal");
  EXPECT_EQ(e.line(), 3u);
  EXPECT_EQ(e.expected(), (std::vector<std::string>{"INFER", "NOTE", "DIAGNOSIS"}));

  e = parse_error_of("FINDING mt_central 250.00 mm_cu normal\nDIAGNOSIS Normal");
  EXPECT_EQ(e.column(), 27u);
  EXPECT_EQ(e.expected(), (std::vector<std::string>{"um"}));

  e = parse_error_of("FINDING mt_central 250.5 um normal\nDIAGNOSIS Normal");
  EXPECT_EQ(e.column(), 25u);

  e = parse_error_of("FINDING retinal_mood 1.00 um normal\nDIAGNOSIS Normal");
  EXPECT_EQ(e.column(), 9u);

  e = parse_error_of("FINDING mt_central 250.00 um odd\nDIAGNOSIS Normal");
  EXPECT_EQ(e.expected(), (std::vector<std::string>{"low", "normal", "high"}));

  e = parse_error_of("DIAGNOSIS Cataract");
  EXPECT_EQ(e.column(), 11u);
  EXPECT_EQ(e.expected().size(), 7u);

  e = parse_error_of("FINDING mt_central 250.00 um normal");
  EXPECT_EQ(e.expected(), (std::vector<std::string>{"DIAGNOSIS"}));

  e = parse_error_of("DIAGNOSIS Normal\nDIAGNOSIS AMD");
  EXPECT_EQ(e.line(), 2u);

  e = parse_error_of("DIAGNOSIS  Normal");
  EXPECT_EQ(e.column(), 11u);
}

TEST(Dsl, NoteSurvivesRoundTrip) {
  const std::string text = "FINDING av_ratio 0.50 unitless low\nINFER hypertensive_arteriolar_change 0\n"
                           "NOTE follow up in six months\nDIAGNOSIS Hypertension";
  const auto ast = parse_report(text);
  ASSERT_TRUE(ast.free_text.has_value());
  EXPECT_EQ(*ast.free_text, "follow up in six months");
  EXPECT_EQ(report_to_text(ast), text);
}

TEST(Tokenizer, EmptyTextIsEmptySequence) { EXPECT_TRUE(Tokenizer().tokenize("").empty()); }

TEST(Tokenizer, DiagnosisLineHasFixedIds) {
  const Tokenizer tok;
  EXPECT_EQ(tok.tokenize("DIAGNOSIS Normal"), (std::vector<int>{72, 1, 78}));
  EXPECT_EQ(tok.symbol(72), "DIAGNOSIS");
  EXPECT_EQ(tok.symbol(78), "Normal");
  EXPECT_EQ(tok.vocab_size(), Tokenizer().vocab_size());
}

TEST(Tokenizer, RoundTripsRandomReports) {
  const Tokenizer tok;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const auto text = report_to_text(random_report(seed));
    const auto ids = tok.tokenize(text);
    for (int id : ids) ASSERT_LT(static_cast<std::size_t>(id), tok.vocab_size());
    EXPECT_EQ(tok.detokenize(ids), text);
  }
}

TEST(Tokenizer, UnknownWordsAreSpelledOut) {
  const Tokenizer tok;
  const auto ids = tok.tokenize("Qx_y 12.5");
  EXPECT_EQ(ids.size(), 9u);
  EXPECT_EQ(tok.detokenize(ids), "Qx_y 12.5");
}

TEST(Tokenizer, OutOfAlphabetCharacterIsRejected) {
  EXPECT_THROW(Tokenizer().tokenize("DIAGNOSIS Normal!"), ValidationError);
  EXPECT_THROW(Tokenizer().tokenize("caf\xc3\xa9"), ValidationError);
}

TEST(Tokenizer, DetokenizeRejectsOutOfRangeIds) {
  const Tokenizer tok;
  EXPECT_THROW(tok.detokenize({static_cast<int>(tok.vocab_size())}), ValidationError);
  EXPECT_EQ(tok.detokenize({72, Tokenizer::kEos, 1}), "DIAGNOSIS");
}
