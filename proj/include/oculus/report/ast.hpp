// SPDX-License-Identifier: Apache-2.0
//
// Structured form of a grounded report: numeric findings, sub-inferences
// citing findings by index, and a single final diagnosis.
#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "oculus/cohort/schema.hpp"

namespace oculus::report {

enum class Flag { low, normal, high };

inline std::string_view to_string(Flag f) {
  switch (f) {
    case Flag::low: return "low";
    case Flag::normal: return "normal";
    case Flag::high: return "high";
  }
  return "normal";
}

inline bool try_parse_flag(std::string_view s, Flag& out) {
  if (s == "low") out = Flag::low;
  else if (s == "normal") out = Flag::normal;
  else if (s == "high") out = Flag::high;
  else return false;
  return true;
}

/// Position of `value` relative to the closed reference interval [low, high].
inline Flag flag_for(double value, double low, double high) {
  if (value < low) return Flag::low;
  if (value > high) return Flag::high;
  return Flag::normal;
}

inline Flag flag_for(std::size_t biomarker, double value) {
  const auto& s = biomarker_spec(biomarker);
  return flag_for(value, s.reference_low, s.reference_high);
}

/// Rounds to the 2-decimal value that the text form prints.
inline double round_to_hundredths(double v) { return std::round(v * 100.0) / 100.0; }

struct Finding {
  std::string biomarker;
  double value = 0.0;
  std::string unit;
  Flag flag = Flag::normal;

  friend bool operator==(const Finding&, const Finding&) = default;
};

struct SubInference {
  std::string template_id;
  std::vector<std::size_t> citations;  // 0-based finding indices

  friend bool operator==(const SubInference&, const SubInference&) = default;
};

struct ReportAST {
  std::vector<Finding> findings;
  std::vector<SubInference> inferences;
  DiagnosisLabel diagnosis = DiagnosisLabel::Normal;
  std::optional<std::string> free_text;

  friend bool operator==(const ReportAST&, const ReportAST&) = default;

  /// Throws ValidationError naming the first violated structural rule.
  void validate() const {
    for (std::size_t i = 0; i < findings.size(); ++i) {
      const auto& f = findings[i];
      std::size_t idx = 0;
      if (!try_find_biomarker(f.biomarker, idx))
        throw ValidationError("finding " + std::to_string(i) + " names unknown biomarker '" + f.biomarker + "'");
      if (biomarker_spec(idx).unit != f.unit)
        throw ValidationError("finding " + std::to_string(i) + " has unit '" + f.unit + "', schema says '" +
                              std::string(biomarker_spec(idx).unit) + "'");
      if (!std::isfinite(f.value)) throw ValidationError("finding " + std::to_string(i) + " value is not finite");
    }
    for (std::size_t k = 0; k < inferences.size(); ++k) {
      const auto& s = inferences[k];
      if (s.citations.empty()) throw ValidationError("sub-inference " + std::to_string(k) + " cites no finding");
      for (auto c : s.citations)
        if (c >= findings.size())
          throw ValidationError("sub-inference " + std::to_string(k) + " cites missing finding index " +
                                std::to_string(c));
    }
  }
};

}  // namespace oculus::report
