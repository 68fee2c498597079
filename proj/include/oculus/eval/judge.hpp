// SPDX-License-Identifier: Apache-2.0
//
// Optional external judge. Sends {"prompt", "candidate"} and expects a JSON
// object carrying the six rubric metrics and semantic_overlap.
#pragma once

#include <nlohmann/json.hpp>

#include <string>

#include "oculus/eval/rubric.hpp"
#include "oculus/report/external.hpp"

namespace oculus::eval {

inline nlohmann::json to_json(const RubricScore& s) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t k = 0; k < kNumMetrics; ++k) j[std::string(kMetricNames[k])] = s.metrics[k];
  j["semantic_overlap"] = s.semantic_overlap;
  return j;
}

/// Reads a score object, rejecting missing, non-numeric or out-of-range fields.
inline RubricScore rubric_score_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("rubric score must be a JSON object");
  RubricScore s;
  auto number = [&](std::string_view key) {
    const std::string k(key);
    if (!j.contains(k) || !j.at(k).is_number()) throw ValidationError("rubric score field '" + k + "' is missing or not a number");
    return j.at(k).get<double>();
  };
  for (std::size_t k = 0; k < kNumMetrics; ++k) s.metrics[k] = number(kMetricNames[k]);
  s.semantic_overlap = number("semantic_overlap");
  s.validate();
  return s;
}

inline std::string judge_prompt(const GradingTruth& truth) {
  return "Grade the candidate eye report against this reference on quantitative_accuracy, "
         "qualitative_accuracy, evidence_grounding, reasoning_consistency, coverage_completeness "
         "and error_severity_penalty (0..100 each) plus semantic_overlap (0..1). Reply with one JSON object.\n"
         "reference:\n" +
         report::report_to_text(truth.oracle);
}

/// Any transport failure or invalid reply becomes JudgeError so callers can
/// skip the sample and keep the deterministic grade.
inline RubricScore external_judge(std::string_view candidate_text, const std::string& prompt,
                                  const report::EndpointConfig& cfg) {
  try {
    return rubric_score_from_json(report::post_json(cfg, {{"prompt", prompt}, {"candidate", std::string(candidate_text)}}));
  } catch (const TransportError& e) {
    throw JudgeError(std::string("judge unreachable: ") + e.what());
  } catch (const ValidationError& e) {
    throw JudgeError(std::string("judge reply rejected: ") + e.what());
  }
}

}  // namespace oculus::eval
