// SPDX-License-Identifier: Apache-2.0
//
// Deterministic report generator: biomarkers plus a diagnosis label in, a
// grounded ReportAST out. The label is honoured as the final diagnosis.
#pragma once

#include <algorithm>
#include <array>
#include <string_view>
#include <vector>

#include "oculus/report/rules.hpp"

namespace oculus::report {

/// Markers always reported, whatever their flags.
inline constexpr std::array<std::string_view, 10> kKeyPanel{
    "mt_central",         "total_macular_volume", "rnfl_average",      "gcipl_average",    "cup_disc_ratio",
    "av_ratio",           "artery_fractal_dim",   "vein_fractal_dim",  "artery_tortuosity", "vein_tortuosity"};

inline ReportAST eye_guideline_report(const BiomarkerVector& b, DiagnosisLabel g, const EyeGuidelineRules& rules) {
  if (rules.ranges.size() != kNumBiomarkers) throw ValidationError("rule table does not cover the biomarker schema");
  std::array<Flag, kNumBiomarkers> flags{};
  std::array<bool, kNumBiomarkers> include{};
  for (std::size_t i = 0; i < kNumBiomarkers; ++i) {
    flags[i] = rules.flag(i, b[i]);
    include[i] = flags[i] != Flag::normal;
  }
  for (auto name : kKeyPanel) include[biomarker_index(name)] = true;

  const DiseaseRule& rule = rules.rule_for(g);
  std::vector<std::size_t> matched;  // biomarker indices
  std::vector<std::size_t> designated;
  for (const auto& term : rule.pattern) {
    std::size_t idx = 0;
    if (!try_find_biomarker(term.biomarker, idx))
      throw ValidationError("rule for " + std::string(to_string(g)) + " names unknown biomarker '" + term.biomarker + "'");
    designated.push_back(idx);
    if (flags[idx] == term.required) matched.push_back(idx);
  }
  const bool label_driven = g != DiagnosisLabel::Normal && matched.empty();
  if (label_driven)
    for (auto idx : designated) include[idx] = true;

  ReportAST ast;
  std::array<std::size_t, kNumBiomarkers> position{};
  for (std::size_t i = 0; i < kNumBiomarkers; ++i) {
    if (!include[i]) continue;
    const auto& s = biomarker_spec(i);
    position[i] = ast.findings.size();
    ast.findings.push_back({std::string(s.name), round_to_hundredths(b[i]), std::string(s.unit), flags[i]});
  }

  SubInference inference;
  if (g == DiagnosisLabel::Normal) {
    inference.template_id = rule.template_id;
    std::array<bool, kNumDomains> seen{};
    for (std::size_t i = 0; i < kNumBiomarkers; ++i) {
      const auto d = static_cast<std::size_t>(biomarker_spec(i).domain);
      if (include[i] && flags[i] == Flag::normal && !seen[d]) {
        seen[d] = true;
        inference.citations.push_back(position[i]);
      }
    }
    if (inference.citations.empty())
      for (std::size_t k = 0; k < ast.findings.size(); ++k) inference.citations.push_back(k);
  } else if (label_driven) {
    inference.template_id = std::string(kLabelDrivenTemplate);
    for (auto idx : designated) inference.citations.push_back(position[idx]);
  } else {
    inference.template_id = rule.template_id;
    for (auto idx : matched) inference.citations.push_back(position[idx]);
  }
  std::sort(inference.citations.begin(), inference.citations.end());
  ast.inferences.push_back(std::move(inference));
  ast.diagnosis = g;
  return ast;
}

}  // namespace oculus::report
