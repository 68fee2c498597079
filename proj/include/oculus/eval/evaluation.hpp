// SPDX-License-Identifier: Apache-2.0
//
// Per-sample grading of generated reports and the aggregate summary.
#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

#include "oculus/core/csv.hpp"
#include "oculus/eval/classification.hpp"
#include "oculus/eval/rubric.hpp"

namespace oculus::eval {

struct SampleResult {
  std::uint64_t eid = 0;
  RubricScore score;
  DiagnosisLabel predicted = DiagnosisLabel::Normal;
  DiagnosisLabel truth = DiagnosisLabel::Normal;
};

/// Grades one decoded report. A malformed report predicts Normal for the
/// confusion matrix and scores 0 on every metric.
inline SampleResult grade_sample(std::uint64_t eid, std::string_view candidate_text, const GradingTruth& truth,
                                 const report::EyeGuidelineRules& rules, const report::Tokenizer& tok) {
  SampleResult r;
  r.eid = eid;
  r.truth = truth.label;
  r.score = rubric_score_text(candidate_text, truth, rules, tok);
  if (!r.score.malformed) r.predicted = report::parse_report(candidate_text).diagnosis;
  return r;
}

struct EvaluationSummary {
  std::size_t n = 0;
  std::size_t malformed = 0;
  double macro_f1 = 0.0;
  std::array<double, kNumMetrics> metric_means{};
  double semantic_overlap_mean = 0.0;
  ConfusionMatrix confusion;

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    j["n"] = n;
    j["malformed"] = malformed;
    j["macro_f1"] = macro_f1;
    nlohmann::json means = nlohmann::json::object();
    for (std::size_t k = 0; k < kNumMetrics; ++k) means[std::string(kMetricNames[k])] = metric_means[k];
    means["semantic_overlap"] = semantic_overlap_mean;
    j["metric_means"] = means;
    j["confusion_matrix"] = confusion.to_json();
    return j;
  }
};

/// Means run over every sample, malformed ones included at 0.
inline EvaluationSummary summarize(const std::vector<SampleResult>& results) {
  if (results.empty()) throw EvaluationError("no samples to summarize");
  EvaluationSummary s;
  s.n = results.size();
  std::vector<LabelPair> pairs;
  for (const auto& r : results) {
    s.malformed += r.score.malformed;
    for (std::size_t k = 0; k < kNumMetrics; ++k) s.metric_means[k] += r.score.metrics[k];
    s.semantic_overlap_mean += r.score.semantic_overlap;
    pairs.emplace_back(r.truth, r.predicted);
  }
  const double n = static_cast<double>(s.n);
  for (auto& m : s.metric_means) m /= n;
  s.semantic_overlap_mean /= n;
  const auto f1 = macro_f1(pairs);
  s.macro_f1 = f1.macro_f1;
  s.confusion = f1.confusion;
  return s;
}

inline std::string results_csv(const std::vector<SampleResult>& results) {
  std::string out = "eid";
  for (auto name : kMetricNames) out += "," + std::string(name);
  out += ",semantic_overlap,predicted,true,malformed\n";
  for (const auto& r : results) {
    out += std::to_string(r.eid);
    for (double v : r.score.metrics) out += "," + format_double(v);
    out += "," + format_double(r.score.semantic_overlap) + "," + std::string(to_string(r.predicted)) + "," +
           std::string(to_string(r.truth)) + "," + (r.score.malformed ? "1" : "0") + "\n";
  }
  return out;
}

}  // namespace oculus::eval
