// SPDX-License-Identifier: Apache-2.0
//
// The 37-slot biomarker schema (31 OCT structural metrics, 6 CFP vascular
// and disc metrics), diagnosis labels and class priors.
//
// Reference ranges are mean +/- 2 SD, so mean = (low + high) / 2 and
// SD = (high - low) / 4. Per-class shifts are in SD units. The same table is
// published as data/biomarker_schema.csv; a unit test keeps the two equal.
#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <sstream>
#include <string>
#include <string_view>

#include "oculus/core/error.hpp"

namespace oculus {

enum class DiagnosisLabel { Normal, Hypertension, Diabetes, Glaucoma, DR, AMD, Alzheimer };

inline constexpr std::size_t kNumLabels = 7;
inline constexpr std::array<DiagnosisLabel, kNumLabels> kAllLabels{
    DiagnosisLabel::Normal, DiagnosisLabel::Hypertension, DiagnosisLabel::Diabetes, DiagnosisLabel::Glaucoma,
    DiagnosisLabel::DR,     DiagnosisLabel::AMD,          DiagnosisLabel::Alzheimer};

/// Cohort class distribution (fractions), in label order.
inline constexpr std::array<double, kNumLabels> kLabelPriors{0.3840, 0.3605, 0.1995, 0.0340, 0.0116, 0.0086, 0.0018};

inline constexpr std::array<std::string_view, kNumLabels> kLabelNames{"Normal", "Hypertension", "Diabetes", "Glaucoma",
                                                                      "DR",     "AMD",          "Alzheimer"};

inline std::string_view to_string(DiagnosisLabel l) { return kLabelNames[static_cast<std::size_t>(l)]; }
inline std::size_t index_of(DiagnosisLabel l) { return static_cast<std::size_t>(l); }

inline bool try_parse_label(std::string_view s, DiagnosisLabel& out) {
  for (std::size_t i = 0; i < kNumLabels; ++i) {
    if (kLabelNames[i] == s) {
      out = kAllLabels[i];
      return true;
    }
  }
  return false;
}

inline DiagnosisLabel label_from_string(std::string_view s) {
  DiagnosisLabel l{};
  if (!try_parse_label(s, l)) throw ValidationError("unknown diagnosis label '" + std::string(s) + "'");
  return l;
}

enum class Modality { oct, cfp };

inline std::string_view to_string(Modality m) { return m == Modality::oct ? "oct" : "cfp"; }

inline Modality modality_from_string(std::string_view s) {
  if (s == "oct") return Modality::oct;
  if (s == "cfp") return Modality::cfp;
  throw ValidationError("unknown modality '" + std::string(s) + "'");
}

/// Anatomical groups used for report coverage.
enum class Domain { macula, nerve_fiber, optic_disc, vasculature };

inline constexpr std::size_t kNumDomains = 4;
inline constexpr std::array<std::string_view, kNumDomains> kDomainNames{"macula", "nerve_fiber", "optic_disc",
                                                                        "vasculature"};

inline std::string_view to_string(Domain d) { return kDomainNames[static_cast<std::size_t>(d)]; }

struct BiomarkerSpec {
  std::string_view name;
  std::string_view unit;
  Modality modality;
  Domain domain;
  double reference_low;
  double reference_high;
  double resolution;
  /// Mean shift in SD units for Hypertension, Diabetes, Glaucoma, DR, AMD, Alzheimer.
  std::array<double, kNumLabels - 1> shift;

  constexpr double mean() const { return 0.5 * (reference_low + reference_high); }
  constexpr double sd() const { return 0.25 * (reference_high - reference_low); }
  constexpr double width() const { return reference_high - reference_low; }
  double shift_for(DiagnosisLabel l) const {
    return l == DiagnosisLabel::Normal ? 0.0 : shift[static_cast<std::size_t>(l) - 1];
  }
};

inline constexpr std::size_t kNumOctBiomarkers = 31;
inline constexpr std::size_t kNumCfpBiomarkers = 6;
inline constexpr std::size_t kNumBiomarkers = kNumOctBiomarkers + kNumCfpBiomarkers;

namespace detail {
using M = Modality;
using D = Domain;
// clang-format off
//                 name                       unit       mod     domain           low     high    res     HTN   DM   GLC   DR   AMD   ALZ
inline constexpr std::array<BiomarkerSpec, kNumBiomarkers> kSchema{{
  {"mt_central",              "um",       M::oct, D::macula,      225.0,  305.0,  1.0,  {0.0, 1.5, 0.0, 3.0, 2.0, 0.0}},
  {"mt_inner_superior",       "um",       M::oct, D::macula,      300.0,  360.0,  1.0,  {0.0, 0.0, 0.0, 0.0, 0.0, 0.0}},
  {"mt_inner_inferior",       "um",       M::oct, D::macula,      295.0,  355.0,  1.0,  {0.0, 0.0, 0.0, 0.0, 0.0, 0.0}},
  {"mt_inner_nasal",          "um",       M::oct, D::macula,      300.0,  360.0,  1.0,  {0.0, 0.0, 0.0, 0.0, 0.0, 0.0}},
  {"mt_inner_temporal",       "um",       M::oct, D::macula,      285.0,  345.0,  1.0,  {0.0, 0.0, 0.0, 0.0, 0.0, 0.0}},
  {"mt_outer_superior",       "um",       M::oct, D::macula,      265.0,  315.0,  1.0,  {0.0, 0.0, 0.0, 0.0, 0.0, 0.0}},
  {"mt_outer_inferior",       "um",       M::oct, D::macula,      255.0,  305.0,  1.0,  {0.0, 0.0, 0.0, 0.0, 0.0, 0.0}},
  {"mt_outer_nasal",          "um",       M::oct, D::macula,      280.0,  330.0,  1.0,  {0.0, 0.0, 0.0, 0.0, 0.0, 0.0}},
  {"mt_outer_temporal",       "um",       M::oct, D::macula,      250.0,  300.0,  1.0,  {0.0, 0.0, 0.0, 0.0, 0.0, 0.0}},
  {"mt_average",              "um",       M::oct, D::macula,      270.0,  310.0,  1.0,  {0.0, 0.0, 0.0, 0.0, 0.0, 0.0}},
  {"total_macular_volume",    "mm_cu",    M::oct, D::macula,        7.80,   9.40, 0.01, {0.0, 0.0, 0.0, 1.5, 0.0, 0.0}},
  {"central_subfield_volume", "mm_cu",    M::oct, D::macula,        0.17,   0.25, 0.01, {0.0, 0.0, 0.0, 2.5, 0.0, 0.0}},
  {"inner_ring_volume",       "mm_cu",    M::oct, D::macula,        1.75,   2.15, 0.01, {0.0, 0.0, 0.0, 0.0, 0.0, 0.0}},
  {"outer_ring_volume",       "mm_cu",    M::oct, D::macula,        5.60,   6.80, 0.01, {0.0, 0.0, 0.0, 0.0, 0.0, 0.0}},
  {"drusen_area",             "mm_sq",    M::oct, D::macula,        0.05,   0.45, 0.01, {0.0, 0.0, 0.0, 0.0, 3.0, 0.0}},
  {"inl_thickness",           "um",       M::oct, D::macula,       28.0,   44.0,  1.0,  {0.0, 1.5, 0.0, 2.0, 0.0, 0.0}},
  {"opl_thickness",           "um",       M::oct, D::macula,       22.0,   38.0,  1.0,  {0.0, 0.0, 0.0, 0.0, 0.0, 0.0}},
  {"onl_thickness",           "um",       M::oct, D::macula,       68.0,  100.0,  1.0,  {0.0, 0.0, 0.0, 0.0, 0.0, 0.0}},
  {"isos_thickness",          "um",       M::oct, D::macula,       18.0,   30.0,  1.0,  {0.0, 0.0, 0.0, 0.0, -2.0, 0.0}},
  {"rpe_thickness",           "um",       M::oct, D::macula,       12.0,   24.0,  1.0,  {0.0, 0.0, 0.0, 0.0, 2.0, 0.0}},
  {"choroid_thickness",       "um",       M::oct, D::macula,      180.0,  380.0,  1.0,  {-1.5, 0.0, 0.0, 0.0, -1.5, 0.0}},
  {"rnfl_average",            "um",       M::oct, D::nerve_fiber,  80.0,  112.0,  1.0,  {0.0, 0.0, -2.0, 0.0, 0.0, -1.5}},
  {"rnfl_superior",           "um",       M::oct, D::nerve_fiber,  98.0,  146.0,  1.0,  {0.0, 0.0, -2.5, 0.0, 0.0, 0.0}},
  {"rnfl_inferior",           "um",       M::oct, D::nerve_fiber, 100.0,  150.0,  1.0,  {0.0, 0.0, -2.5, 0.0, 0.0, 0.0}},
  {"rnfl_nasal",              "um",       M::oct, D::nerve_fiber,  54.0,   94.0,  1.0,  {0.0, 0.0, 0.0, 0.0, 0.0, 0.0}},
  {"rnfl_temporal",           "um",       M::oct, D::nerve_fiber,  52.0,   88.0,  1.0,  {0.0, 0.0, 0.0, 0.0, 0.0, 0.0}},
  {"gcipl_average",           "um",       M::oct, D::nerve_fiber,  70.0,   94.0,  1.0,  {0.0, 0.0, -2.0, 0.0, 0.0, -2.0}},
  {"gcipl_superior",          "um",       M::oct, D::nerve_fiber,  70.0,   98.0,  1.0,  {0.0, 0.0, 0.0, 0.0, 0.0, 0.0}},
  {"gcipl_inferior",          "um",       M::oct, D::nerve_fiber,  68.0,   96.0,  1.0,  {0.0, 0.0, 0.0, 0.0, 0.0, -1.5}},
  {"gcipl_nasal",             "um",       M::oct, D::nerve_fiber,  70.0,   98.0,  1.0,  {0.0, 0.0, 0.0, 0.0, 0.0, 0.0}},
  {"gcipl_temporal",          "um",       M::oct, D::nerve_fiber,  68.0,   94.0,  1.0,  {0.0, 0.0, 0.0, 0.0, 0.0, 0.0}},
  {"cup_disc_ratio",          "unitless", M::cfp, D::optic_disc,    0.20,   0.60, 0.01, {0.0, 0.0, 3.0, 0.0, 0.0, 0.0}},
  {"av_ratio",                "unitless", M::cfp, D::vasculature,   0.58,   0.82, 0.01, {-2.5, 0.0, 0.0, 0.0, 0.0, 0.0}},
  {"artery_fractal_dim",      "unitless", M::cfp, D::vasculature,   1.36,   1.56, 0.01, {-2.0, 0.0, 0.0, 0.0, 0.0, 0.0}},
  {"vein_fractal_dim",        "unitless", M::cfp, D::vasculature,   1.40,   1.60, 0.01, {0.0, 1.5, 0.0, 0.0, 0.0, -1.5}},
  {"artery_tortuosity",       "unitless", M::cfp, D::vasculature,   1.04,   1.24, 0.01, {2.0, 0.0, 0.0, 0.0, 0.0, 0.0}},
  {"vein_tortuosity",         "unitless", M::cfp, D::vasculature,   1.06,   1.26, 0.01, {0.0, 2.0, 0.0, 2.0, 0.0, 0.0}},
}};
// clang-format on
}  // namespace detail

inline const std::array<BiomarkerSpec, kNumBiomarkers>& biomarker_schema() { return detail::kSchema; }

inline const BiomarkerSpec& biomarker_spec(std::size_t i) { return detail::kSchema.at(i); }

inline bool try_find_biomarker(std::string_view name, std::size_t& index) {
  for (std::size_t i = 0; i < kNumBiomarkers; ++i) {
    if (detail::kSchema[i].name == name) {
      index = i;
      return true;
    }
  }
  return false;
}

inline std::size_t biomarker_index(std::string_view name) {
  std::size_t i = 0;
  if (!try_find_biomarker(name, i)) throw ValidationError("unknown biomarker '" + std::string(name) + "'");
  return i;
}

inline constexpr std::size_t kCupDiscIndex = 31;
inline constexpr std::array<std::string_view, 6> kShiftColumns{"shift_hypertension", "shift_diabetes", "shift_glaucoma",
                                                               "shift_dr",           "shift_amd",      "shift_alzheimer"};

/// The schema rendered as CSV (the published data/biomarker_schema.csv).
inline std::string schema_csv() {
  std::ostringstream out;
  out << "name,unit,modality,domain,reference_low,reference_high,resolution";
  for (auto c : kShiftColumns) out << ',' << c;
  out << '\n';
  auto num = [](double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  };
  for (const auto& s : detail::kSchema) {
    out << s.name << ',' << s.unit << ',' << to_string(s.modality) << ',' << to_string(s.domain) << ','
        << num(s.reference_low) << ',' << num(s.reference_high) << ',' << num(s.resolution);
    for (double v : s.shift) out << ',' << num(v);
    out << '\n';
  }
  return out.str();
}

/// Values of one patient, indexed in schema order.
struct BiomarkerVector {
  std::array<double, kNumBiomarkers> values{};

  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
  double at(std::string_view name) const { return values[biomarker_index(name)]; }

  /// Schema midpoints (every marker exactly inside its reference range).
  static BiomarkerVector midpoints() {
    BiomarkerVector b;
    for (std::size_t i = 0; i < kNumBiomarkers; ++i) b.values[i] = detail::kSchema[i].mean();
    return b;
  }

  void validate() const {
    for (std::size_t i = 0; i < kNumBiomarkers; ++i) {
      const double v = values[i];
      const auto& s = detail::kSchema[i];
      if (!std::isfinite(v)) throw ValidationError("biomarker " + std::string(s.name) + " is not finite");
      if (i == kCupDiscIndex) {
        if (!(v > 0.0 && v < 1.0))
          throw ValidationError("cup_disc_ratio must lie in (0, 1), got " + std::to_string(v));
      } else if (!(v > 0.0)) {
        throw ValidationError("biomarker " + std::string(s.name) + " must be positive, got " + std::to_string(v));
      }
    }
  }

  friend bool operator==(const BiomarkerVector&, const BiomarkerVector&) = default;
};

}  // namespace oculus
