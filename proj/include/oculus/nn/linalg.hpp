// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

#include "oculus/nn/matrix.hpp"

namespace oculus::nn {

/// In-place Cholesky factorisation A = L L^T of a symmetric positive definite
/// matrix; the lower triangle of `a` receives L.
inline void cholesky_in_place(DenseMatrix& a) {
  if (a.rows != a.cols) throw ShapeError("cholesky: matrix is not square");
  const std::size_t n = a.rows;
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
    if (!(d > 0.0)) throw ValidationError("cholesky: matrix is not positive definite at pivot " + std::to_string(j));
    const double ljj = std::sqrt(d);
    a(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
      a(i, j) = s / ljj;
    }
    for (std::size_t k = j + 1; k < n; ++k) a(j, k) = 0.0;
  }
}

/// Solves (L L^T) X = B for every column of B.
inline DenseMatrix cholesky_solve(const DenseMatrix& l, const DenseMatrix& b) {
  const std::size_t n = l.rows;
  if (b.rows != n) throw ShapeError("cholesky_solve: right-hand side has wrong row count");
  DenseMatrix x = b;
  for (std::size_t c = 0; c < b.cols; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = x(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x(k, c);
      x(i, c) = s / l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double s = x(ii, c);
      for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x(k, c);
      x(ii, c) = s / l(ii, ii);
    }
  }
  return x;
}

/// Ridge regression with an unpenalised intercept.
struct RidgeModel {
  DenseMatrix coef;  // features x targets
  Vector intercept;  // targets
  Vector feature_mean;

  Vector predict(std::span<const double> x) const {
    Vector y = intercept;
    Vector centred(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) centred[i] = x[i] - feature_mean[i];
    gemv_accumulate(centred, coef, y);
    return y;
  }
};

/// Fits min ||Y - b - (X - mean) W||^2 + lambda ||W||^2. Rows are samples.
inline RidgeModel fit_ridge(const DenseMatrix& x, const DenseMatrix& y, double lambda) {
  if (!(lambda > 0.0)) throw ValidationError("ridge regression requires lambda > 0");
  if (x.rows != y.rows || x.rows == 0) throw ShapeError("ridge: feature and target row counts differ or are zero");
  const std::size_t n = x.rows;
  const std::size_t p = x.cols;
  const std::size_t q = y.cols;
  RidgeModel m;
  m.feature_mean.assign(p, 0.0);
  m.intercept.assign(q, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < p; ++j) m.feature_mean[j] += x(r, j);
    for (std::size_t j = 0; j < q; ++j) m.intercept[j] += y(r, j);
  }
  for (double& v : m.feature_mean) v /= static_cast<double>(n);
  for (double& v : m.intercept) v /= static_cast<double>(n);

  DenseMatrix gram(p, p);
  DenseMatrix rhs(p, q);
  Vector xc(p);
  Vector yc(q);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < p; ++j) xc[j] = x(r, j) - m.feature_mean[j];
    for (std::size_t j = 0; j < q; ++j) yc[j] = y(r, j) - m.intercept[j];
    outer_accumulate(xc, xc, gram);
    outer_accumulate(xc, yc, rhs);
  }
  for (std::size_t j = 0; j < p; ++j) gram(j, j) += lambda;
  cholesky_in_place(gram);
  m.coef = cholesky_solve(gram, rhs);
  return m;
}

}  // namespace oculus::nn
