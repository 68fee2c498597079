// SPDX-License-Identifier: Apache-2.0
//
// Guideline rule table: reference ranges per biomarker, one flag pattern per
// disease mapping to a sub-inference template, and a disease priority order.
// The default table is derived from the biomarker schema (ranges are the
// reference bounds; a disease's designated markers are the ones its class
// shifts, with the flag given by the shift direction) and is published as
// data/eye_guideline_rules.json.
#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "oculus/cohort/schema.hpp"
#include "oculus/report/ast.hpp"

namespace oculus::report {

inline constexpr std::string_view kNormalTemplate = "within_reference_limits";
inline constexpr std::string_view kLabelDrivenTemplate = "label_driven_imaging_silent";

/// Disease template ids in label order (Normal excluded).
inline constexpr std::array<std::string_view, kNumLabels - 1> kDiseaseTemplates{
    "hypertensive_arteriolar_change", "diabetic_microvascular_change", "glaucomatous_optic_neuropathy",
    "diabetic_macular_edema",         "drusen_rpe_degeneration",      "neurodegenerative_thinning"};

/// Every template id the engine can emit, in a fixed order.
inline std::vector<std::string_view> all_template_ids() {
  std::vector<std::string_view> ids{kNormalTemplate, kLabelDrivenTemplate};
  ids.insert(ids.end(), kDiseaseTemplates.begin(), kDiseaseTemplates.end());
  return ids;
}

struct RangeRule {
  std::string biomarker;
  double low = 0.0;
  double high = 0.0;
};

struct PatternTerm {
  std::string biomarker;
  Flag required = Flag::high;
};

struct DiseaseRule {
  DiagnosisLabel disease = DiagnosisLabel::Normal;
  std::string template_id;
  std::vector<PatternTerm> pattern;  // empty for Normal
};

struct EyeGuidelineRules {
  std::vector<RangeRule> ranges;  // schema order
  std::vector<DiseaseRule> diseases;
  std::vector<DiagnosisLabel> priority;  // tie-break order over non-Normal classes

  void validate() const {
    if (ranges.size() != kNumBiomarkers) throw ValidationError("rule table must list a range for all 37 biomarkers");
    for (std::size_t i = 0; i < ranges.size(); ++i) {
      if (ranges[i].biomarker != biomarker_spec(i).name)
        throw ValidationError("rule range " + std::to_string(i) + " is for '" + ranges[i].biomarker +
                              "', expected '" + std::string(biomarker_spec(i).name) + "'");
      if (!(ranges[i].low < ranges[i].high))
        throw ValidationError("rule range for " + ranges[i].biomarker + " has low >= high");
    }
    for (auto label : kAllLabels) {
      const auto n = std::count_if(diseases.begin(), diseases.end(), [&](const auto& d) { return d.disease == label; });
      if (n != 1) throw ValidationError("rule table needs exactly one rule for " + std::string(to_string(label)));
    }
    for (const auto& d : diseases) {
      if (d.template_id.empty()) throw ValidationError("rule for " + std::string(to_string(d.disease)) + " has no template");
      if (d.disease != DiagnosisLabel::Normal && d.pattern.empty())
        throw ValidationError("rule for " + std::string(to_string(d.disease)) + " has an empty pattern");
      for (const auto& t : d.pattern) {
        std::size_t idx = 0;
        if (!try_find_biomarker(t.biomarker, idx))
          throw ValidationError("rule for " + std::string(to_string(d.disease)) + " names unknown biomarker '" +
                                t.biomarker + "'");
        if (t.required == Flag::normal)
          throw ValidationError("rule pattern terms must require a non-normal flag");
      }
    }
    std::vector<DiagnosisLabel> sorted = priority;
    std::sort(sorted.begin(), sorted.end());
    std::vector<DiagnosisLabel> expected(kAllLabels.begin() + 1, kAllLabels.end());
    if (sorted != expected) throw ValidationError("priority order must list each disease exactly once");
  }

  const DiseaseRule& rule_for(DiagnosisLabel label) const {
    for (const auto& d : diseases)
      if (d.disease == label) return d;
    throw ValidationError("no rule for " + std::string(to_string(label)));
  }

  Flag flag(std::size_t biomarker, double value) const {
    return flag_for(value, ranges.at(biomarker).low, ranges.at(biomarker).high);
  }

  /// Disease whose template id is `id`; false for the narrative templates.
  bool disease_for_template(std::string_view id, DiagnosisLabel& out) const {
    for (const auto& d : diseases) {
      if (d.disease != DiagnosisLabel::Normal && d.template_id == id) {
        out = d.disease;
        return true;
      }
    }
    return false;
  }
};

inline EyeGuidelineRules default_rules() {
  EyeGuidelineRules r;
  for (const auto& s : biomarker_schema()) r.ranges.push_back({std::string(s.name), s.reference_low, s.reference_high});
  r.diseases.push_back({DiagnosisLabel::Normal, std::string(kNormalTemplate), {}});
  for (std::size_t k = 1; k < kNumLabels; ++k) {
    DiseaseRule d{kAllLabels[k], std::string(kDiseaseTemplates[k - 1]), {}};
    for (const auto& s : biomarker_schema()) {
      const double shift = s.shift_for(kAllLabels[k]);
      if (shift != 0.0) d.pattern.push_back({std::string(s.name), shift > 0.0 ? Flag::high : Flag::low});
    }
    r.diseases.push_back(std::move(d));
  }
  r.priority = {DiagnosisLabel::Glaucoma, DiagnosisLabel::AMD,      DiagnosisLabel::DR,
                DiagnosisLabel::Alzheimer, DiagnosisLabel::Diabetes, DiagnosisLabel::Hypertension};
  return r;
}

inline nlohmann::json rules_to_json(const EyeGuidelineRules& r) {
  nlohmann::json ranges = nlohmann::json::array();
  for (const auto& x : r.ranges) ranges.push_back({{"biomarker", x.biomarker}, {"low", x.low}, {"high", x.high}});
  nlohmann::json diseases = nlohmann::json::array();
  for (const auto& d : r.diseases) {
    nlohmann::json pattern = nlohmann::json::array();
    for (const auto& t : d.pattern)
      pattern.push_back({{"biomarker", t.biomarker}, {"flag", std::string(to_string(t.required))}});
    diseases.push_back(
        {{"disease", std::string(to_string(d.disease))}, {"template", d.template_id}, {"pattern", pattern}});
  }
  nlohmann::json priority = nlohmann::json::array();
  for (auto l : r.priority) priority.push_back(std::string(to_string(l)));
  return {{"ranges", ranges}, {"diseases", diseases}, {"priority", priority}};
}

inline EyeGuidelineRules rules_from_json(const nlohmann::json& j) {
  EyeGuidelineRules r;
  try {
    for (const auto& x : j.at("ranges"))
      r.ranges.push_back({x.at("biomarker").get<std::string>(), x.at("low").get<double>(), x.at("high").get<double>()});
    for (const auto& d : j.at("diseases")) {
      DiseaseRule rule{label_from_string(d.at("disease").get<std::string>()), d.at("template").get<std::string>(), {}};
      for (const auto& t : d.at("pattern")) {
        Flag f{};
        if (!try_parse_flag(t.at("flag").get<std::string>(), f)) throw ValidationError("rule pattern has a bad flag");
        rule.pattern.push_back({t.at("biomarker").get<std::string>(), f});
      }
      r.diseases.push_back(std::move(rule));
    }
    for (const auto& l : j.at("priority")) r.priority.push_back(label_from_string(l.get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed rule table: ") + e.what());
  }
  r.validate();
  return r;
}

}  // namespace oculus::report
