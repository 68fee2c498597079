// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference verification of analytic gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "oculus/core/rng.hpp"
#include "oculus/nn/adamw.hpp"

namespace oculus::nn {

struct GradCheckOptions {
  double h = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  /// 0 checks every scalar; otherwise a seeded sample per tensor.
  std::size_t max_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string path;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_relative_error = 0.0;
  std::string worst_path;
  std::size_t worst_index = 0;
  bool passed = true;
  std::size_t checked() const { return entries.size(); }
};

/// `loss_fn(const M&)` must be deterministic; `params` is perturbed in place
/// and restored bit-exactly after each probe.
template <ParameterSet M, class LossFn>
GradCheckReport finite_diff_check(LossFn&& loss_fn, M& params, const M& analytic, const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  auto p = collect_params(params);
  auto g = collect_params(analytic);
  if (p.size() != g.size()) throw ShapeError("finite_diff_check: gradient structure mismatch");
  Rng rng(derive_seed(opt.seed, 0x6772616463686bULL));
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto values = p[k].second;
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (opt.max_per_tensor != 0 && idx.size() > opt.max_per_tensor) {
      rng.shuffle(idx);
      idx.resize(opt.max_per_tensor);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      const double saved = values[i];
      values[i] = saved + opt.h;
      bump_revision(params);
      const double up = loss_fn(static_cast<const M&>(params));
      values[i] = saved - opt.h;
      bump_revision(params);
      const double down = loss_fn(static_cast<const M&>(params));
      values[i] = saved;
      bump_revision(params);
      const double numeric = (up - down) / (2.0 * opt.h);
      const double a = g[k].second[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.floor});
      const double rel = std::abs(a - numeric) / denom;
      report.entries.push_back({p[k].first, i, a, numeric, rel});
      const double ranked = std::isnan(rel) ? INFINITY : rel;
      if (report.entries.size() == 1 || ranked > report.max_relative_error) {
        report.max_relative_error = ranked;
        report.worst_path = p[k].first;
        report.worst_index = i;
      }
      if (!(rel <= opt.tolerance)) report.passed = false;
    }
  }
  return report;
}

}  // namespace oculus::nn
