// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <chrono>
#include <thread>

#include "oculus/cohort/cohort.hpp"
#include "oculus/eval/corruption.hpp"
#include "oculus/eval/evaluation.hpp"
#include "oculus/eval/judge.hpp"
#include "oculus/report/engine.hpp"
#include "support/stub_server.hpp"

using namespace oculus;
using namespace oculus::eval;
using report::Finding;
using oculus::testing::StubServer;

namespace {

const report::EyeGuidelineRules& rules() {
  static const auto r = report::default_rules();
  return r;
}

const report::Tokenizer& tok() {
  static const report::Tokenizer t;
  return t;
}

GradingTruth make_truth(std::size_t i, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0, i));
  GradingTruth t;
  t.label = kAllLabels[i % kNumLabels];
  t.biomarkers = sample_biomarkers(t.label, rng);
  t.oracle = report::eye_guideline_report(t.biomarkers, t.label, rules());
  return t;
}

constexpr std::size_t kSamples = 1000;

std::string unit_of(std::string_view name) { return std::string(biomarker_spec(biomarker_index(name)).unit); }
double b_mid(std::string_view name) { return report::round_to_hundredths(BiomarkerVector::midpoints().at(name)); }

}  // namespace

TEST(Rubric, OracleReportScoresFullMarksOnEverySample) {
  for (std::size_t i = 0; i < kSamples; ++i) {
    const auto t = make_truth(i, 7);
    const auto s = rubric_score(t.oracle, t, rules(), tok());
    for (std::size_t k = 0; k < kNumMetrics; ++k) ASSERT_EQ(s.metrics[k], 100.0) << kMetricNames[k] << " sample " << i;
    ASSERT_EQ(s.semantic_overlap, 1.0);
    ASSERT_FALSE(s.malformed);
  }
}

TEST(Rubric, EachCorruptionLowersItsMetricAndSparesTheOthers) {
  for (auto c : kAllCorruptions) {
    std::size_t applied = 0;
    for (std::size_t i = 0; i < kSamples; ++i) {
      const auto t = make_truth(i, 11);
      Rng rng(derive_seed(11, 1, i));
      const auto bad = corrupt(c, t.oracle, t, rules(), rng);
      if (!bad) continue;
      ++applied;
      const auto s = rubric_score(*bad, t, rules(), tok());
      const std::size_t target = target_metric(c);
      ASSERT_LT(s.metrics[target], 100.0) << to_string(c) << " sample " << i;
      for (std::size_t k = 0; k < kNumMetrics; ++k)
        if (k != target)
          ASSERT_NEAR(s.metrics[k], 100.0, 5.0) << to_string(c) << " moved " << kMetricNames[k] << " sample " << i;
    }
    EXPECT_GE(applied, kSamples * 9 / 10) << to_string(c);
  }
}

TEST(Rubric, CorruptionsAreSeedDeterministic) {
  const auto t = make_truth(3, 5);
  for (auto c : kAllCorruptions) {
    Rng a(99), b(99);
    EXPECT_EQ(corrupt(c, t.oracle, t, rules(), a), corrupt(c, t.oracle, t, rules(), b));
  }
}

TEST(Rubric, EveryValuePerturbedGivesZeroQuantitativeAccuracy) {
  for (std::size_t i = 0; i < 200; ++i) {
    const auto t = make_truth(i, 13);
    Rng rng(i);
    const auto bad = value_perturb(t.oracle, rng, true, &rules());
    ASSERT_TRUE(bad);
    // Qualitative oracle: recompute each flag from the schema range directly.
    std::size_t agree = 0;
    for (const auto& f : bad->findings) {
      const auto idx = biomarker_index(f.biomarker);
      const auto& spec = biomarker_spec(idx);
      agree += report::flag_for(f.value, spec.reference_low, spec.reference_high) ==
               report::flag_for(t.biomarkers[idx], spec.reference_low, spec.reference_high);
    }
    const auto s = rubric_score(*bad, t, rules(), tok());
    EXPECT_EQ(s.quantitative_accuracy(), 0.0);
    EXPECT_DOUBLE_EQ(s.qualitative_accuracy(), 100.0 * static_cast<double>(agree) / static_cast<double>(bad->findings.size()));
    for (std::size_t k = 2; k < kNumMetrics; ++k) EXPECT_EQ(s.metrics[k], 100.0) << kMetricNames[k];
  }
}

TEST(Rubric, FlippedFlagsLowerOnlyQualitativeAccuracyByTheirShare) {
  const auto t = make_truth(0, 17);
  auto bad = t.oracle;
  bad.findings.back().flag = bad.findings.back().flag == Flag::normal ? Flag::high : Flag::normal;
  const auto s = rubric_score(bad, t, rules(), tok());
  const double n = static_cast<double>(bad.findings.size());
  EXPECT_DOUBLE_EQ(s.qualitative_accuracy(), 100.0 * (n - 1.0) / n);
  EXPECT_EQ(s.quantitative_accuracy(), 100.0);
}

TEST(Rubric, NormalDiagnosisCitingHighCupDiscRatioIsInconsistentAndSevere) {
  auto b = BiomarkerVector::midpoints();
  b[biomarker_index("cup_disc_ratio")] = 0.80;
  b[biomarker_index("rnfl_average")] = 60.0;
  b[biomarker_index("gcipl_average")] = 50.0;
  const GradingTruth truth{b, DiagnosisLabel::Glaucoma,
                           report::eye_guideline_report(b, DiagnosisLabel::Glaucoma, rules())};
  report::ReportAST c;
  c.findings.push_back({"cup_disc_ratio", 0.80, "unitless", Flag::high});
  c.findings.push_back({"rnfl_average", 60.0, unit_of("rnfl_average"), Flag::low});
  c.inferences.push_back({std::string(report::kNormalTemplate), {0}});
  c.diagnosis = DiagnosisLabel::Normal;

  // Hand-derived: the normal narrative cites a flagged finding (1 of 1
  // sub-inferences inconsistent); Normal is claimed while 3 glaucoma flags
  // fire (one severe error).
  const auto s = rubric_score(c, truth, rules(), tok());
  EXPECT_LT(s.reasoning_consistency(), 100.0);
  EXPECT_EQ(s.reasoning_consistency(), 0.0);
  EXPECT_EQ(s.error_severity_penalty(), 75.0);
  EXPECT_EQ(count_severe_errors(c, truth, rules()), 1u);
  EXPECT_EQ(s.quantitative_accuracy(), 100.0);
  EXPECT_EQ(s.qualitative_accuracy(), 100.0);
  // Macula and vasculature unstated: nerve fiber, optic disc and the diagnosis remain.
  EXPECT_DOUBLE_EQ(s.coverage_completeness(), 60.0);
}

TEST(Rubric, SevereErrorsAccumulateAndFloorAtZero) {
  const auto truth = GradingTruth{BiomarkerVector::midpoints(), DiagnosisLabel::Normal, {}};
  report::ReportAST c;
  c.findings.push_back({"mt_central", b_mid("mt_central"), unit_of("mt_central"), Flag::normal});
  // Midpoints fire nothing, so every asserted disease is severe.
  std::string note;
  for (auto id : report::kDiseaseTemplates) note += (note.empty() ? "" : " ") + std::string(id);
  c.free_text = note;
  EXPECT_EQ(count_severe_errors(c, truth, rules()), report::kDiseaseTemplates.size());
  auto t2 = truth;
  t2.oracle = report::eye_guideline_report(truth.biomarkers, DiagnosisLabel::Normal, rules());
  EXPECT_EQ(rubric_score(c, t2, rules(), tok()).error_severity_penalty(), 0.0);
}

TEST(Rubric, DiagnosisLineAloneIsNotASevereError) {
  const auto t = make_truth(0, 3);  // Normal label
  auto c = t.oracle;
  c.diagnosis = DiagnosisLabel::Alzheimer;
  EXPECT_EQ(count_severe_errors(c, t, rules()), 0u);
}

TEST(Rubric, EmptyFindingsAndInferencesUseStatedConventions) {
  const auto t = make_truth(0, 3);
  report::ReportAST c;
  c.diagnosis = t.label;
  const auto s = rubric_score(c, t, rules(), tok());
  EXPECT_EQ(s.quantitative_accuracy(), 0.0);
  EXPECT_EQ(s.qualitative_accuracy(), 0.0);
  EXPECT_EQ(s.evidence_grounding(), 0.0);
  EXPECT_EQ(s.reasoning_consistency(), 100.0);
  EXPECT_DOUBLE_EQ(s.coverage_completeness(), 20.0);
}

TEST(Rubric, MalformedTextScoresZeroAndIsFlagged) {
  const auto t = make_truth(1, 3);
  for (std::string_view text : {"", "FINDING nothing\nDIAGNOSIS Normal", "DIAGNOSIS Unknown", "garbage #"}) {
    const auto s = rubric_score_text(text, t, rules(), tok());
    EXPECT_TRUE(s.malformed) << text;
    for (double m : s.metrics) EXPECT_EQ(m, 0.0);
    EXPECT_EQ(s.semantic_overlap, 0.0);
  }
  const auto ok = rubric_score_text(report::report_to_text(t.oracle), t, rules(), tok());
  EXPECT_FALSE(ok.malformed);
  EXPECT_EQ(ok.evidence_grounding(), 100.0);
}

TEST(Rubric, RuleTableThatMissesTheSchemaIsAConfigurationError) {
  const auto t = make_truth(0, 3);
  auto broken = rules();
  broken.ranges.pop_back();
  EXPECT_THROW(rubric_score(t.oracle, t, broken, tok()), ConfigError);
}

TEST(Rubric, ScoresStayInRangeUnderRandomCorruptionChains) {
  for (std::size_t i = 0; i < 300; ++i) {
    const auto t = make_truth(i, 23);
    Rng rng(i);
    auto r = t.oracle;
    for (int step = 0; step < 4; ++step)
      if (auto next = corrupt(kAllCorruptions[rng.below(kNumMetrics)], r, t, rules(), rng)) r = *next;
    const auto s = rubric_score(r, t, rules(), tok());
    EXPECT_NO_THROW(s.validate());
  }
}

TEST(SemanticOverlap, IdenticalDisjointAndHalfMissing) {
  EXPECT_EQ(semantic_overlap("FINDING INFER", "FINDING INFER", tok()).score, 1.0);
  EXPECT_EQ(semantic_overlap("NOTE", "INFER", tok()).score, 0.0);
  // Candidate holds half of the reference tokens and nothing else.
  EXPECT_DOUBLE_EQ(semantic_overlap("ab", "abcd", tok()).score, 2.0 / 3.0);
  EXPECT_EQ(semantic_overlap("", "", tok()).score, 1.0);
}

TEST(SemanticOverlap, IsSymmetricAndOrderFree) {
  EXPECT_EQ(semantic_overlap("ba", "ab", tok()).score, 1.0);
  EXPECT_EQ(semantic_overlap("abc", "abd", tok()).score, semantic_overlap("abd", "abc", tok()).score);
  for (std::size_t i = 0; i < 50; ++i) {
    const auto a = report::report_to_text(make_truth(i, 1).oracle);
    EXPECT_EQ(semantic_overlap(a, a, tok()).score, 1.0);
  }
}

TEST(SemanticOverlap, TextOutsideTheAlphabetIsMalformed) {
  const auto r = semantic_overlap("abc#", "abc", tok());
  EXPECT_EQ(r.score, 0.0);
  EXPECT_TRUE(r.malformed);
}

namespace {

// Per-class precision and recall counted straight from the pairs.
double brute_force_macro_f1(const std::vector<LabelPair>& pairs) {
  double sum = 0.0;
  for (auto c : kAllLabels) {
    double tp = 0, fp = 0, fn = 0;
    for (const auto& [t, p] : pairs) {
      if (t == c && p == c) ++tp;
      if (t != c && p == c) ++fp;
      if (t == c && p != c) ++fn;
    }
    if (tp == 0) continue;
    const double prec = tp / (tp + fp), rec = tp / (tp + fn);
    sum += 2 * prec * rec / (prec + rec);
  }
  return sum / static_cast<double>(kNumLabels);
}

}  // namespace

TEST(MacroF1, MatchesBruteForceOnRandomPairings) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(1000);
    std::vector<LabelPair> pairs;
    for (std::size_t i = 0; i < n; ++i)
      pairs.emplace_back(kAllLabels[rng.below(kNumLabels)], kAllLabels[rng.below(kNumLabels)]);
    const auto r = macro_f1(pairs);
    EXPECT_NEAR(r.macro_f1, brute_force_macro_f1(pairs), 1e-12);
    EXPECT_EQ(r.confusion.total(), n);
  }
}

TEST(MacroF1, PerfectPredictionsScoreOne) {
  std::vector<LabelPair> pairs;
  for (auto l : kAllLabels) pairs.emplace_back(l, l);
  EXPECT_EQ(macro_f1(pairs).macro_f1, 1.0);
}

TEST(MacroF1, AllNormalPredictionsScoreNormalF1OverSeven) {
  std::vector<LabelPair> pairs;
  for (std::size_t i = 0; i < 70; ++i) pairs.emplace_back(kAllLabels[i % kNumLabels], DiagnosisLabel::Normal);
  // Normal: TP = 10, FP = 60, FN = 0.
  const double f1_normal = 2.0 * 10 / (2.0 * 10 + 60 + 0);
  EXPECT_DOUBLE_EQ(macro_f1(pairs).macro_f1, f1_normal / 7.0);
}

TEST(MacroF1, TwoClassToy) {
  const auto a = DiagnosisLabel::Hypertension, b = DiagnosisLabel::Diabetes, other = DiagnosisLabel::Glaucoma;
  // Class A: one hit, one false positive, one miss. Class B: perfect.
  const std::vector<LabelPair> pairs{{a, a}, {other, a}, {a, other}, {b, b}};
  EXPECT_DOUBLE_EQ(macro_f1(pairs, {a, b}).macro_f1, 0.75);
}

TEST(MacroF1, ConfusionRowsCountTruePerClass) {
  std::vector<LabelPair> pairs{{DiagnosisLabel::AMD, DiagnosisLabel::Normal}, {DiagnosisLabel::AMD, DiagnosisLabel::AMD}};
  const auto m = macro_f1(pairs).confusion;
  EXPECT_EQ(m.row_sum(DiagnosisLabel::AMD), 2u);
  EXPECT_EQ(m.counts[index_of(DiagnosisLabel::AMD)][index_of(DiagnosisLabel::Normal)], 1u);
  EXPECT_DOUBLE_EQ(m.precision(DiagnosisLabel::AMD), 1.0);
  EXPECT_DOUBLE_EQ(m.recall(DiagnosisLabel::AMD), 0.5);
}

TEST(MacroF1, EmptyInputIsAnEvaluationError) {
  EXPECT_THROW(macro_f1({}), EvaluationError);
}

namespace {

report::EndpointConfig judge_config(const std::string& url, double timeout = 2.0) {
  report::EndpointConfig cfg;
  cfg.url = url;
  cfg.timeout_seconds = timeout;
  cfg.max_retries = 0;
  return cfg;
}

}  // namespace

TEST(ExternalJudge, ValidReplyParsesToTheStubScore) {
  RubricScore expected;
  expected.metrics = {90, 80, 70, 60, 50, 100};
  expected.semantic_overlap = 0.5;
  std::string seen_candidate;
  StubServer server([&](const httplib::Request& req, httplib::Response& res) {
    seen_candidate = nlohmann::json::parse(req.body).at("candidate").get<std::string>();
    res.set_content(to_json(expected).dump(), "application/json");
  });
  const auto t = make_truth(0, 1);
  const auto got = external_judge("DIAGNOSIS Normal", judge_prompt(t), judge_config(server.url("/judge")));
  EXPECT_EQ(got, expected);
  EXPECT_EQ(seen_candidate, "DIAGNOSIS Normal");
}

TEST(ExternalJudge, OutOfRangeMetricIsRejected) {
  RubricScore s;
  s.metrics = {101, 0, 0, 0, 0, 0};
  StubServer server([&](const httplib::Request&, httplib::Response& res) {
    res.set_content(to_json(s).dump(), "application/json");
  });
  EXPECT_THROW(external_judge("x", "p", judge_config(server.url("/judge"))), JudgeError);
}

TEST(ExternalJudge, MissingFieldIsRejected) {
  StubServer server([&](const httplib::Request&, httplib::Response& res) {
    res.set_content("{\"quantitative_accuracy\": 50}", "application/json");
  });
  EXPECT_THROW(external_judge("x", "p", judge_config(server.url("/judge"))), JudgeError);
}

TEST(ExternalJudge, TimeoutIsAJudgeErrorAndTheDeterministicGradeStillWorks) {
  StubServer server([&](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(800));
    res.set_content("{}", "application/json");
  });
  const auto t = make_truth(2, 1);
  const auto text = report::report_to_text(t.oracle);
  EXPECT_THROW(external_judge(text, judge_prompt(t), judge_config(server.url("/judge"), 0.2)), JudgeError);
  EXPECT_EQ(rubric_score_text(text, t, rules(), tok()).error_severity_penalty(), 100.0);
}

TEST(Evaluation, CsvAndSummaryReflectTheSamples) {
  std::vector<SampleResult> results;
  const auto t0 = make_truth(0, 2), t1 = make_truth(1, 2);
  results.push_back(grade_sample(10, report::report_to_text(t0.oracle), t0, rules(), tok()));
  results.push_back(grade_sample(11, "not a report", t1, rules(), tok()));
  const auto csv = results_csv(results);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "eid,quantitative_accuracy,qualitative_accuracy,evidence_grounding,reasoning_consistency,"
            "coverage_completeness,error_severity_penalty,semantic_overlap,predicted,true,malformed");
  EXPECT_NE(csv.find("\n10,100,100,100,100,100,100,1,Normal,Normal,0\n"), std::string::npos);
  EXPECT_NE(csv.find("\n11,0,0,0,0,0,0,0,Normal,Hypertension,1\n"), std::string::npos);

  const auto summary = summarize(results);
  EXPECT_EQ(summary.n, 2u);
  EXPECT_EQ(summary.malformed, 1u);
  EXPECT_EQ(summary.metric_means[0], 50.0);
  const auto j = summary.to_json();
  EXPECT_EQ(j.at("confusion_matrix").at("counts")[index_of(DiagnosisLabel::Hypertension)][0], 1);
  EXPECT_TRUE(j.contains("macro_f1"));
  EXPECT_THROW(summarize({}), EvaluationError);
}
