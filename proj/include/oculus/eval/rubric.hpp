// SPDX-License-Identifier: Apache-2.0
//
// Deterministic six-metric report grader plus a token-multiset overlap score.
//
// All metrics are judged against the true biomarkers and label:
//   quantitative_accuracy   stated values within max(0.01, 0.05 * range width)
//   qualitative_accuracy    stated flags equal to the rule flag of the true value
//   evidence_grounding      sub-inferences citing exactly the findings the
//                           rule table designates for their template
//   reasoning_consistency   sub-inferences compatible with the diagnosis
//   coverage_completeness   anatomical domains stated, out of 5
//   error_severity_penalty  100 - 25 per severe error, floored at 0
#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "oculus/report/dsl.hpp"
#include "oculus/report/rules.hpp"
#include "oculus/report/tokenizer.hpp"

namespace oculus::eval {

using report::Flag;
using report::ReportAST;

inline constexpr std::size_t kNumMetrics = 6;
inline constexpr std::array<std::string_view, kNumMetrics> kMetricNames{
    "quantitative_accuracy", "qualitative_accuracy",  "evidence_grounding",
    "reasoning_consistency", "coverage_completeness", "error_severity_penalty"};

/// Macula, nerve fiber, optic disc, vasculature, plus the diagnosis statement.
inline constexpr std::size_t kRequiredDomains = kNumDomains + 1;
inline constexpr double kSeverePenalty = 25.0;

struct RubricScore {
  std::array<double, kNumMetrics> metrics{};
  double semantic_overlap = 0.0;
  bool malformed = false;

  double& quantitative_accuracy() { return metrics[0]; }
  double& qualitative_accuracy() { return metrics[1]; }
  double& evidence_grounding() { return metrics[2]; }
  double& reasoning_consistency() { return metrics[3]; }
  double& coverage_completeness() { return metrics[4]; }
  double& error_severity_penalty() { return metrics[5]; }
  double quantitative_accuracy() const { return metrics[0]; }
  double qualitative_accuracy() const { return metrics[1]; }
  double evidence_grounding() const { return metrics[2]; }
  double reasoning_consistency() const { return metrics[3]; }
  double coverage_completeness() const { return metrics[4]; }
  double error_severity_penalty() const { return metrics[5]; }

  void validate() const {
    for (std::size_t k = 0; k < kNumMetrics; ++k)
      if (!(metrics[k] >= 0.0 && metrics[k] <= 100.0))
        throw ValidationError(std::string(kMetricNames[k]) + " must lie in [0, 100]");
    if (!(semantic_overlap >= 0.0 && semantic_overlap <= 1.0))
      throw ValidationError("semantic_overlap must lie in [0, 1]");
  }

  friend bool operator==(const RubricScore&, const RubricScore&) = default;
};

/// Ground truth for one sample.
struct GradingTruth {
  BiomarkerVector biomarkers;
  DiagnosisLabel label = DiagnosisLabel::Normal;
  ReportAST oracle;
};

struct OverlapResult {
  double score = 0.0;
  bool malformed = false;
};

/// F1 of the token multisets (each token matched at most once). Both empty
/// counts as identical. Text outside the report alphabet scores 0 and is
/// flagged malformed.
inline OverlapResult semantic_overlap(std::string_view candidate, std::string_view reference,
                                      const report::Tokenizer& tok) {
  std::vector<int> a, b;
  try {
    a = tok.tokenize(candidate);
    b = tok.tokenize(reference);
  } catch (const ValidationError&) {
    return {0.0, true};
  }
  if (a.empty() && b.empty()) return {1.0, false};
  if (a.empty() || b.empty()) return {0.0, false};
  std::map<int, std::size_t> ca, cb;
  for (int t : a) ++ca[t];
  for (int t : b) ++cb[t];
  std::size_t matched = 0;
  for (const auto& [t, n] : ca) {
    const auto it = cb.find(t);
    if (it != cb.end()) matched += std::min(n, it->second);
  }
  if (matched == 0) return {0.0, false};
  const double p = static_cast<double>(matched) / static_cast<double>(a.size());
  const double r = static_cast<double>(matched) / static_cast<double>(b.size());
  return {2.0 * p * r / (p + r), false};
}

inline double value_tolerance(std::size_t biomarker) {
  return std::max(0.01, 0.05 * biomarker_spec(biomarker).width());
}

namespace rubric_detail {

inline std::size_t index_of(const report::Finding& f) { return biomarker_index(f.biomarker); }

/// Citations the rule table designates for `template_id`, computed over the
/// candidate's own finding list with flags taken from the true values.
/// `cited` is the sorted, deduplicated citation set under test.
/// Empty when the template has no valid evidence in this report.
inline std::vector<std::size_t> expected_citations(const std::string& template_id, const ReportAST& c,
                                                   const std::vector<std::size_t>& cited,
                                                   const std::vector<Flag>& truth_flags,
                                                   const report::EyeGuidelineRules& rules) {
  std::vector<std::size_t> out;
  DiagnosisLabel disease{};
  if (template_id == report::kNormalTemplate) {
    std::array<bool, kNumDomains> seen{};
    for (std::size_t k = 0; k < c.findings.size(); ++k) {
      const auto d = static_cast<std::size_t>(biomarker_spec(index_of(c.findings[k])).domain);
      if (truth_flags[k] == Flag::normal && !seen[d]) {
        seen[d] = true;
        out.push_back(k);
      }
    }
    if (out.empty())
      for (std::size_t k = 0; k < c.findings.size(); ++k) out.push_back(k);
  } else if (template_id == report::kLabelDrivenTemplate) {
    // Grounded when the citations are exactly the stated markers of some
    // disease whose pattern is silent on the true values.
    for (const auto& rule : rules.diseases) {
      if (rule.disease == DiagnosisLabel::Normal) continue;
      std::vector<std::size_t> designated;
      bool silent = true;
      for (std::size_t k = 0; k < c.findings.size(); ++k)
        for (const auto& term : rule.pattern)
          if (term.biomarker == c.findings[k].biomarker) {
            designated.push_back(k);
            silent = silent && truth_flags[k] != term.required;
            break;
          }
      if (silent && !designated.empty() && designated == cited) return designated;
    }
  } else if (rules.disease_for_template(template_id, disease)) {
    const auto& rule = rules.rule_for(disease);
    for (std::size_t k = 0; k < c.findings.size(); ++k)
      for (const auto& term : rule.pattern)
        if (term.biomarker == c.findings[k].biomarker && truth_flags[k] == term.required) {
          out.push_back(k);
          break;
        }
  }
  return out;
}

/// A sub-inference is compatible when its template agrees with the
/// diagnosis and its citations do not contradict it: the normal narrative
/// cites normal-flagged findings (every finding when none is normal), a
/// disease template cites flagged findings, and an imaging-silent narrative
/// cites only markers of the diagnosed disease.
inline bool compatible(const report::SubInference& inf, const ReportAST& c, const report::EyeGuidelineRules& rules) {
  auto stated_flag = [&](std::size_t k) { return c.findings.at(k).flag; };
  if (inf.template_id == report::kNormalTemplate) {
    if (c.diagnosis != DiagnosisLabel::Normal) return false;
    const bool any_normal = std::any_of(c.findings.begin(), c.findings.end(),
                                        [](const report::Finding& f) { return f.flag == Flag::normal; });
    if (!any_normal) {
      std::vector<std::size_t> cited = inf.citations;
      std::sort(cited.begin(), cited.end());
      cited.erase(std::unique(cited.begin(), cited.end()), cited.end());
      return cited.size() == c.findings.size();
    }
    return std::all_of(inf.citations.begin(), inf.citations.end(),
                       [&](std::size_t k) { return stated_flag(k) == Flag::normal; });
  }
  if (inf.template_id == report::kLabelDrivenTemplate) {
    if (c.diagnosis == DiagnosisLabel::Normal) return false;
    const auto& rule = rules.rule_for(c.diagnosis);
    for (auto k : inf.citations) {
      const auto& name = c.findings.at(k).biomarker;
      if (std::none_of(rule.pattern.begin(), rule.pattern.end(),
                       [&](const report::PatternTerm& t) { return t.biomarker == name; }))
        return false;
    }
    return true;
  }
  DiagnosisLabel disease{};
  return rules.disease_for_template(inf.template_id, disease) && disease == c.diagnosis &&
         std::none_of(inf.citations.begin(), inf.citations.end(),
                      [&](std::size_t k) { return stated_flag(k) == Flag::normal; });
}

/// Number of the disease's pattern terms that fire on the true biomarkers.
inline std::size_t fired_terms(DiagnosisLabel d, const BiomarkerVector& b, const report::EyeGuidelineRules& rules) {
  std::size_t n = 0;
  for (const auto& term : rules.rule_for(d).pattern) {
    const auto idx = biomarker_index(term.biomarker);
    n += rules.flag(idx, b[idx]) == term.required;
  }
  return n;
}

}  // namespace rubric_detail

namespace rubric_detail {

inline std::vector<std::string_view> note_words(const ReportAST& c) {
  std::vector<std::string_view> out;
  if (!c.free_text) return out;
  const std::string_view text = *c.free_text;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(' ', start), text.size());
    if (end > start) out.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

}  // namespace rubric_detail

/// Severe errors: (1) claiming Normal, by diagnosis or by a free-text note
/// naming the normal template, when the true label is a disease with at
/// least two of its pattern flags firing; (2) each distinct disease asserted
/// by a sub-inference template or a free-text note that is not the true
/// label and has none of its pattern flags firing. The diagnosis line alone
/// never triggers (2).
inline std::size_t count_severe_errors(const ReportAST& c, const GradingTruth& truth,
                                       const report::EyeGuidelineRules& rules) {
  std::size_t n = 0;
  const auto words = rubric_detail::note_words(c);
  const bool claims_normal = c.diagnosis == DiagnosisLabel::Normal ||
                             std::find(words.begin(), words.end(), report::kNormalTemplate) != words.end();
  if (claims_normal && truth.label != DiagnosisLabel::Normal &&
      rubric_detail::fired_terms(truth.label, truth.biomarkers, rules) >= 2)
    ++n;
  std::array<bool, kNumLabels> asserted{};
  DiagnosisLabel d{};
  for (const auto& s : c.inferences)
    if (rules.disease_for_template(s.template_id, d)) asserted[index_of(d)] = true;
  for (auto w : words)
    if (rules.disease_for_template(w, d)) asserted[index_of(d)] = true;
  for (auto label : kAllLabels)
    if (asserted[index_of(label)] && label != truth.label &&
        rubric_detail::fired_terms(label, truth.biomarkers, rules) == 0)
      ++n;
  return n;
}

/// Grades a parsed candidate. The rule table must cover the schema.
inline RubricScore rubric_score(const ReportAST& candidate, const GradingTruth& truth,
                                const report::EyeGuidelineRules& rules, const report::Tokenizer& tok) {
  using namespace rubric_detail;
  try {
    rules.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("rule table does not match the biomarker schema: ") + e.what());
  }
  candidate.validate();
  RubricScore s;
  const auto& c = candidate;
  std::vector<Flag> truth_flags;
  std::size_t within = 0, flags_ok = 0;
  std::array<bool, kNumDomains> covered{};
  for (const auto& f : c.findings) {
    const std::size_t idx = index_of(f);
    const double truth_value = truth.biomarkers[idx];
    truth_flags.push_back(rules.flag(idx, truth_value));
    within += std::abs(f.value - truth_value) <= value_tolerance(idx);
    flags_ok += f.flag == truth_flags.back();
    covered[static_cast<std::size_t>(biomarker_spec(idx).domain)] = true;
  }
  const double nf = static_cast<double>(c.findings.size());
  s.quantitative_accuracy() = c.findings.empty() ? 0.0 : 100.0 * static_cast<double>(within) / nf;
  s.qualitative_accuracy() = c.findings.empty() ? 0.0 : 100.0 * static_cast<double>(flags_ok) / nf;

  std::size_t grounded = 0, consistent = 0;
  for (const auto& inf : c.inferences) {
    auto cited = inf.citations;
    std::sort(cited.begin(), cited.end());
    cited.erase(std::unique(cited.begin(), cited.end()), cited.end());
    const auto expected = expected_citations(inf.template_id, c, cited, truth_flags, rules);
    grounded += !expected.empty() && cited == expected;
    consistent += compatible(inf, c, rules);
  }
  const double ni = static_cast<double>(c.inferences.size());
  s.evidence_grounding() = c.inferences.empty() ? 0.0 : 100.0 * static_cast<double>(grounded) / ni;
  s.reasoning_consistency() = c.inferences.empty() ? 100.0 : 100.0 * static_cast<double>(consistent) / ni;

  // A parsed report always carries its diagnosis statement.
  const auto domains = static_cast<double>(std::count(covered.begin(), covered.end(), true) + 1);
  s.coverage_completeness() = 100.0 * domains / static_cast<double>(kRequiredDomains);
  s.error_severity_penalty() =
      std::max(0.0, 100.0 - kSeverePenalty * static_cast<double>(count_severe_errors(c, truth, rules)));
  s.semantic_overlap = semantic_overlap(report::report_to_text(c), report::report_to_text(truth.oracle), tok).score;
  return s;
}

/// Grades raw decoder output: unparseable text scores 0 everywhere and is
/// marked malformed.
inline RubricScore rubric_score_text(std::string_view candidate_text, const GradingTruth& truth,
                                     const report::EyeGuidelineRules& rules, const report::Tokenizer& tok) {
  std::optional<ReportAST> ast;
  try {
    ast = report::parse_report(candidate_text);
  } catch (const ParseError&) {
  } catch (const ValidationError&) {
  }
  if (!ast) {
    RubricScore s;
    s.malformed = true;
    return s;
  }
  return rubric_score(*ast, truth, rules, tok);
}

}  // namespace oculus::eval
