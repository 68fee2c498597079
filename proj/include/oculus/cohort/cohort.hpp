// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <unordered_set>
#include <utility>
#include <vector>

#include "oculus/cohort/render.hpp"
#include "oculus/cohort/schema.hpp"
#include "oculus/core/rng.hpp"
#include "oculus/report/ast.hpp"

namespace oculus {

inline constexpr std::uint64_t kFirstEid = 1000000;

struct CohortSample {
  std::uint64_t eid = 0;
  SyntheticScan oct;
  SyntheticScan cfp;
  BiomarkerVector biomarkers;
  DiagnosisLabel label = DiagnosisLabel::Normal;
  std::optional<report::ReportAST> report;

  friend bool operator==(const CohortSample&, const CohortSample&) = default;
};

using Cohort = std::vector<CohortSample>;

namespace cohort_detail {
enum Stream : std::uint64_t { labels = 1, biomarkers = 2, oct = 3, cfp = 4, split = 5 };

inline double quantize(double v, double resolution) {
  const double per_unit = std::round(1.0 / resolution);
  return std::round(v * per_unit) / per_unit;
}
}  // namespace cohort_detail

/// Class counts by largest-remainder apportionment of the priors.
inline std::array<std::size_t, kNumLabels> label_counts(std::size_t n) {
  std::array<std::size_t, kNumLabels> counts{};
  std::array<double, kNumLabels> remainder{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    const double exact = kLabelPriors[k] * static_cast<double>(n);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    remainder[k] = exact - std::floor(exact);
    assigned += counts[k];
  }
  std::array<std::size_t, kNumLabels> order{};
  for (std::size_t k = 0; k < kNumLabels; ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % kNumLabels]];
  return counts;
}

/// Class-conditional Gaussian draw, quantized to each marker's resolution.
inline BiomarkerVector sample_biomarkers(DiagnosisLabel label, Rng& rng) {
  BiomarkerVector b;
  for (std::size_t i = 0; i < kNumBiomarkers; ++i) {
    const auto& s = biomarker_spec(i);
    const double z = rng.normal() + s.shift_for(label);
    double v = cohort_detail::quantize(s.mean() + s.sd() * z, s.resolution);
    v = std::max(v, s.resolution);
    if (i == kCupDiscIndex) v = std::min(v, 0.99);
    b[i] = v;
  }
  return b;
}

/// Draws n samples. Class counts follow the priors exactly up to rounding;
/// their assignment to indices is a seeded permutation. Everything else is a
/// pure function of (seed, index).
inline Cohort sample_cohort(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ValidationError("sample_cohort: empty cohort requested (n = 0)");
  const auto counts = label_counts(n);
  std::vector<DiagnosisLabel> labels;
  labels.reserve(n);
  for (std::size_t k = 0; k < kNumLabels; ++k) labels.insert(labels.end(), counts[k], kAllLabels[k]);
  Rng label_rng(derive_seed(seed, cohort_detail::labels));
  label_rng.shuffle(labels);

  Cohort cohort(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = cohort[i];
    s.eid = kFirstEid + i;
    s.label = labels[i];
    Rng rng(derive_seed(seed, cohort_detail::biomarkers, i));
    s.biomarkers = sample_biomarkers(s.label, rng);
    s.oct = render_scan(s.biomarkers, Modality::oct, derive_seed(seed, cohort_detail::oct, i));
    s.cfp = render_scan(s.biomarkers, Modality::cfp, derive_seed(seed, cohort_detail::cfp, i));
  }
  return cohort;
}

/// Checks eid uniqueness and scan/biomarker agreement.
inline void validate_cohort(const Cohort& cohort) {
  std::unordered_set<std::uint64_t> seen;
  for (const auto& s : cohort) {
    if (!seen.insert(s.eid).second) throw ValidationError("duplicate eid " + std::to_string(s.eid));
    s.biomarkers.validate();
    if (s.oct.source_biomarkers != s.biomarkers || s.cfp.source_biomarkers != s.biomarkers)
      throw ValidationError("scan biomarkers differ from sample biomarkers for eid " + std::to_string(s.eid));
    if (s.oct.modality != Modality::oct || s.cfp.modality != Modality::cfp)
      throw ValidationError("scan modality mismatch for eid " + std::to_string(s.eid));
    for (const auto* scan : {&s.oct, &s.cfp}) {
      if (scan->height != kScanSize || scan->width != kScanSize || scan->pixels.size() != kScanSize * kScanSize)
        throw ValidationError("scan for eid " + std::to_string(s.eid) + " is not 64x64");
      for (float p : scan->pixels)
        if (!(p >= 0.0f && p <= 1.0f)) throw ValidationError("pixel outside [0,1] for eid " + std::to_string(s.eid));
    }
  }
}

struct CohortSplit {
  Cohort train;
  Cohort test;
};

/// Seeded eid partition; |train| = round(ratio * n), original order kept.
inline CohortSplit split_by_eid(const Cohort& cohort, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ValidationError("split ratio must lie in (0, 1)");
  if (cohort.size() < 2) throw ValidationError("cannot split a cohort with fewer than 2 samples");
  std::vector<std::uint64_t> eids;
  eids.reserve(cohort.size());
  for (const auto& s : cohort) eids.push_back(s.eid);
  std::sort(eids.begin(), eids.end());
  if (std::adjacent_find(eids.begin(), eids.end()) != eids.end()) throw ValidationError("cohort has duplicate eids");
  Rng rng(derive_seed(seed, cohort_detail::split));
  rng.shuffle(eids);
  auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(cohort.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, cohort.size() - 1);
  std::unordered_set<std::uint64_t> train_ids(eids.begin(), eids.begin() + static_cast<std::ptrdiff_t>(n_train));
  CohortSplit out;
  for (const auto& s : cohort) (train_ids.count(s.eid) ? out.train : out.test).push_back(s);
  return out;
}

}  // namespace oculus
