// SPDX-License-Identifier: Apache-2.0
//
// Frozen-encoder linear probe: ridge regression from image embeddings to
// standardized biomarker targets, scored on held-out samples.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "oculus/align/encoders.hpp"
#include "oculus/nn/linalg.hpp"

namespace oculus::align {

struct RegressionScore {
  double mae = 0.0;
  double rmse = 0.0;
  double r2 = 0.0;
};

struct ProbeResult {
  std::vector<std::string> names;
  std::vector<RegressionScore> per_target;
  /// MAE and RMSE pooled over every (sample, target) entry; R^2 averaged
  /// uniformly over targets.
  RegressionScore aggregate;
};

/// Scores predictions against targets, column by column. Rows are samples.
inline ProbeResult score_regression(const DenseMatrix& predicted, const DenseMatrix& target,
                                    std::vector<std::string> names) {
  if (predicted.rows != target.rows || predicted.cols != target.cols)
    throw ShapeError("regression scoring: prediction and target shapes differ");
  if (target.rows < 2) throw EvaluationError("regression scoring needs at least 2 samples");
  ProbeResult out;
  out.names = std::move(names);
  const std::size_t n = target.rows;
  double abs_all = 0.0;
  double sq_all = 0.0;
  double r2_sum = 0.0;
  for (std::size_t c = 0; c < target.cols; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += target(r, c);
    mean /= static_cast<double>(n);
    double abs_err = 0.0, ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double e = predicted(r, c) - target(r, c);
      abs_err += std::abs(e);
      ss_res += e * e;
      ss_tot += (target(r, c) - mean) * (target(r, c) - mean);
    }
    if (!(ss_tot > 0.0)) throw EvaluationError("regression target " + std::to_string(c) + " is constant");
    RegressionScore s{abs_err / static_cast<double>(n), std::sqrt(ss_res / static_cast<double>(n)), 1.0 - ss_res / ss_tot};
    out.per_target.push_back(s);
    abs_all += abs_err;
    sq_all += ss_res;
    r2_sum += s.r2;
  }
  const double cells = static_cast<double>(n * target.cols);
  out.aggregate = {abs_all / cells, std::sqrt(sq_all / cells), r2_sum / static_cast<double>(target.cols)};
  return out;
}

/// Ridge probe of `encoder` fitted on `train`, scored on `test`. Targets are
/// the 31 OCT biomarkers standardized with `targets` (training statistics).
inline ProbeResult linear_probe_regression(const ImageEncoder& encoder, const Standardizer& targets,
                                           const Cohort& train, const Cohort& test, double lambda = 1e-3) {
  if (!(lambda > 0.0)) throw ValidationError("linear probe requires ridge lambda > 0");
  if (train.empty() || test.empty()) throw EvaluationError("linear probe needs non-empty train and test sets");
  auto design = [&](const Cohort& c, DenseMatrix& x, DenseMatrix& y) {
    x = DenseMatrix(c.size(), encoder.embed_dim());
    y = DenseMatrix(c.size(), targets.indices.size());
    for (std::size_t r = 0; r < c.size(); ++r) {
      const auto& scan = encoder.modality == Modality::oct ? c[r].oct : c[r].cfp;
      const auto z = encode_scan(encoder, scan).values;
      std::copy(z.begin(), z.end(), x.row(r).begin());
      const auto t = targets.apply(c[r].biomarkers);
      std::copy(t.begin(), t.end(), y.row(r).begin());
    }
  };
  DenseMatrix xtr, ytr, xte, yte;
  design(train, xtr, ytr);
  design(test, xte, yte);
  const auto model = nn::fit_ridge(xtr, ytr, lambda * static_cast<double>(train.size()));
  DenseMatrix pred(test.size(), targets.indices.size());
  for (std::size_t r = 0; r < test.size(); ++r) {
    const auto p = model.predict(xte.row(r));
    std::copy(p.begin(), p.end(), pred.row(r).begin());
  }
  std::vector<std::string> names;
  for (auto i : targets.indices) names.emplace_back(biomarker_spec(i).name);
  return score_regression(pred, yte, std::move(names));
}

}  // namespace oculus::align
