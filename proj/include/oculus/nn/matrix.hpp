// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "oculus/core/error.hpp"
#include "oculus/core/rng.hpp"

namespace oculus::nn {

using Vector = std::vector<double>;

/// Row-major dense matrix of doubles.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  DenseMatrix(std::size_t r, std::size_t c, std::vector<double> values)
      : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != rows * cols)
      throw ShapeError("matrix data length " + std::to_string(data.size()) + " != " +
                       std::to_string(rows) + "x" + std::to_string(cols));
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;
};

/// Glorot-uniform fill: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline void glorot_uniform(std::span<double> values, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : values) v = rng.uniform(-a, a);
}

// y += x * W where x has W.rows entries and y has W.cols entries. The inner
// loop runs over output columns so each y[j] accumulates in input order.
inline void gemv_accumulate(std::span<const double> x, const DenseMatrix& w, std::span<double> y) {
  for (std::size_t i = 0; i < w.rows; ++i) {
    const double xi = x[i];
    const double* wr = w.data.data() + i * w.cols;
    double* yp = y.data();
    for (std::size_t j = 0; j < w.cols; ++j) yp[j] += xi * wr[j];
  }
}

// dx[i] += sum_j W[i][j] * g[j]
inline void gemv_transpose_accumulate(const DenseMatrix& w, std::span<const double> g, std::span<double> dx) {
  for (std::size_t i = 0; i < w.rows; ++i) {
    const double* wr = w.data.data() + i * w.cols;
    double acc = 0.0;
    for (std::size_t j = 0; j < w.cols; ++j) acc += wr[j] * g[j];
    dx[i] += acc;
  }
}

// dW[i][j] += x[i] * g[j]
inline void outer_accumulate(std::span<const double> x, std::span<const double> g, DenseMatrix& dw) {
  for (std::size_t i = 0; i < dw.rows; ++i) {
    const double xi = x[i];
    double* dr = dw.data.data() + i * dw.cols;
    for (std::size_t j = 0; j < dw.cols; ++j) dr[j] += xi * g[j];
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Cosine similarity; throws on zero-norm input instead of returning 0.
inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ShapeError("cosine_similarity: dims " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw DegenerateInputError("cosine_similarity: zero-norm vector");
  double c = dot(a, b) / (na * nb);
  if (c > 1.0) c = 1.0;
  if (c < -1.0) c = -1.0;
  return c;
}

/// d cos(a,b) / da, written into `grad_a` (accumulated).
inline void cosine_grad_accumulate(std::span<const double> a, std::span<const double> b, double scale,
                                   std::span<double> grad_a) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw DegenerateInputError("cosine gradient: zero-norm vector");
  const double c = dot(a, b) / (na * nb);
  const double inv = 1.0 / (na * nb);
  const double self = c / (na * na);
  for (std::size_t i = 0; i < a.size(); ++i) grad_a[i] += scale * (b[i] * inv - a[i] * self);
}

}  // namespace oculus::nn
