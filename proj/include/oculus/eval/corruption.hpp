// SPDX-License-Identifier: Apache-2.0
//
// Seeded report corruptions, one per rubric metric. Each returns nullopt
// when the report offers nothing to corrupt in the intended way.
#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "oculus/core/rng.hpp"
#include "oculus/eval/rubric.hpp"

namespace oculus::eval {

enum class Corruption {
  value_perturb,
  flag_flip,
  citation_delete,
  diagnosis_swap,
  domain_delete,
  severe_claim_insert
};

inline constexpr std::array<Corruption, kNumMetrics> kAllCorruptions{
    Corruption::value_perturb,  Corruption::flag_flip,     Corruption::citation_delete,
    Corruption::diagnosis_swap, Corruption::domain_delete, Corruption::severe_claim_insert};

/// Rubric metric each corruption is designed to lower.
inline std::size_t target_metric(Corruption c) { return static_cast<std::size_t>(c); }

inline std::string_view to_string(Corruption c) {
  static constexpr std::array<std::string_view, kNumMetrics> names{
      "value_perturb", "flag_flip", "citation_delete", "diagnosis_swap", "domain_delete", "severe_claim_insert"};
  return names[static_cast<std::size_t>(c)];
}

namespace corruption_detail {

inline std::size_t pick(Rng& rng, std::size_t n) { return static_cast<std::size_t>(rng.below(n)); }

inline bool is_cited(const ReportAST& r, std::size_t k) {
  for (const auto& s : r.inferences)
    if (std::find(s.citations.begin(), s.citations.end(), k) != s.citations.end()) return true;
  return false;
}

/// Moves a stated value 2 tolerances away from its true neighbourhood in
/// the direction that keeps its flag: outward for flagged values, toward
/// the range centre for normal ones.
inline double perturbed_value(const report::Finding& f) {
  const std::size_t idx = biomarker_index(f.biomarker);
  const auto& spec = biomarker_spec(idx);
  const double step = 2.0 * value_tolerance(idx);
  double dir = 1.0;
  if (f.flag == Flag::low) {
    dir = -1.0;
  } else if (f.flag == Flag::normal) {
    dir = f.value < 0.5 * (spec.reference_low + spec.reference_high) ? 1.0 : -1.0;
  }
  return report::round_to_hundredths(f.value + dir * step);
}

}  // namespace corruption_detail

/// Shifts one stated value (every value when `all` is set) beyond tolerance.
/// With `recompute_flags` the shifted findings take the rule flag of their
/// new value; otherwise flags are left as stated.
inline std::optional<ReportAST> value_perturb(const ReportAST& r, Rng& rng, bool all = false,
                                              const report::EyeGuidelineRules* recompute_flags = nullptr) {
  if (r.findings.empty()) return std::nullopt;
  ReportAST out = r;
  auto apply = [&](std::size_t k) {
    auto& f = out.findings[k];
    f.value = corruption_detail::perturbed_value(f);
    if (recompute_flags) f.flag = recompute_flags->flag(biomarker_index(f.biomarker), f.value);
  };
  if (all) {
    for (std::size_t k = 0; k < out.findings.size(); ++k) apply(k);
  } else {
    apply(corruption_detail::pick(rng, out.findings.size()));
  }
  return out;
}

/// Changes one stated flag, preferring findings no sub-inference cites.
inline std::optional<ReportAST> flag_flip(const ReportAST& r, Rng& rng) {
  if (r.findings.empty()) return std::nullopt;
  std::vector<std::size_t> uncited;
  for (std::size_t k = 0; k < r.findings.size(); ++k)
    if (!corruption_detail::is_cited(r, k)) uncited.push_back(k);
  ReportAST out = r;
  if (!uncited.empty()) {
    auto& f = out.findings[uncited[corruption_detail::pick(rng, uncited.size())]];
    f.flag = f.flag == Flag::normal ? (rng.below(2) ? Flag::high : Flag::low) : Flag::normal;
  } else {
    // Every finding is cited; swap direction so a flagged finding stays flagged.
    auto& f = out.findings[corruption_detail::pick(rng, out.findings.size())];
    f.flag = f.flag == Flag::high ? Flag::low : Flag::high;
  }
  return out;
}

/// Removes one citation, preferring sub-inferences that keep at least one;
/// a sub-inference left without citations is dropped.
inline std::optional<ReportAST> citation_delete(const ReportAST& r, Rng& rng) {
  if (r.inferences.empty()) return std::nullopt;
  std::vector<std::size_t> multi;
  for (std::size_t i = 0; i < r.inferences.size(); ++i)
    if (r.inferences[i].citations.size() > 1) multi.push_back(i);
  ReportAST out = r;
  const std::size_t i =
      multi.empty() ? corruption_detail::pick(rng, r.inferences.size()) : multi[corruption_detail::pick(rng, multi.size())];
  auto& cites = out.inferences[i].citations;
  cites.erase(cites.begin() + static_cast<std::ptrdiff_t>(corruption_detail::pick(rng, cites.size())));
  if (cites.empty()) out.inferences.erase(out.inferences.begin() + static_cast<std::ptrdiff_t>(i));
  return out;
}

/// Replaces the diagnosis with a different disease (never Normal).
inline std::optional<ReportAST> diagnosis_swap(const ReportAST& r, Rng& rng) {
  std::vector<DiagnosisLabel> others;
  for (auto l : kAllLabels)
    if (l != DiagnosisLabel::Normal && l != r.diagnosis) others.push_back(l);
  ReportAST out = r;
  out.diagnosis = others[corruption_detail::pick(rng, others.size())];
  return out;
}

/// Drops every finding of one anatomical domain and remaps citations. The
/// first domain, in the order vasculature, optic disc, nerve fiber, macula,
/// that is stated and whose removal leaves every sub-inference citing
/// something is chosen.
inline std::optional<ReportAST> domain_delete(const ReportAST& r, Rng& /*rng*/) {
  for (auto domain : {Domain::vasculature, Domain::optic_disc, Domain::nerve_fiber, Domain::macula}) {
    std::vector<std::size_t> remap(r.findings.size(), r.findings.size());
    ReportAST out = r;
    out.findings.clear();
    for (std::size_t k = 0; k < r.findings.size(); ++k) {
      if (biomarker_spec(biomarker_index(r.findings[k].biomarker)).domain == domain) continue;
      remap[k] = out.findings.size();
      out.findings.push_back(r.findings[k]);
    }
    if (out.findings.size() == r.findings.size() || out.findings.empty()) continue;
    bool ok = true;
    for (auto& s : out.inferences) {
      std::vector<std::size_t> kept;
      for (auto k : s.citations)
        if (remap[k] < r.findings.size()) kept.push_back(remap[k]);
      s.citations = std::move(kept);
      ok = ok && !s.citations.empty();
    }
    if (ok) return out;
  }
  return std::nullopt;
}

/// Adds a free-text note asserting a disease other than the true label whose
/// pattern is entirely silent on the true values; when none exists and the
/// true label is a disease with two or more pattern flags firing, the note
/// claims the normal narrative instead.
inline std::optional<ReportAST> severe_claim_insert(const ReportAST& r, const GradingTruth& truth,
                                                    const report::EyeGuidelineRules& rules, Rng& rng) {
  std::vector<const report::DiseaseRule*> silent;
  for (const auto& d : rules.diseases)
    if (d.disease != DiagnosisLabel::Normal && d.disease != truth.label &&
        rubric_detail::fired_terms(d.disease, truth.biomarkers, rules) == 0)
      silent.push_back(&d);
  ReportAST out = r;
  if (!silent.empty()) {
    out.free_text = silent[corruption_detail::pick(rng, silent.size())]->template_id;
  } else if (truth.label != DiagnosisLabel::Normal && rubric_detail::fired_terms(truth.label, truth.biomarkers, rules) >= 2) {
    out.free_text = std::string(report::kNormalTemplate);
  } else {
    return std::nullopt;
  }
  return out;
}

inline std::optional<ReportAST> corrupt(Corruption c, const ReportAST& r, const GradingTruth& truth,
                                        const report::EyeGuidelineRules& rules, Rng& rng) {
  switch (c) {
    case Corruption::value_perturb: return value_perturb(r, rng);
    case Corruption::flag_flip: return flag_flip(r, rng);
    case Corruption::citation_delete: return citation_delete(r, rng);
    case Corruption::diagnosis_swap: return diagnosis_swap(r, rng);
    case Corruption::domain_delete: return domain_delete(r, rng);
    case Corruption::severe_claim_insert: return severe_claim_insert(r, truth, rules, rng);
  }
  return std::nullopt;
}

}  // namespace oculus::eval
