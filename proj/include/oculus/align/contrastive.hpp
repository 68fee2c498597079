// SPDX-License-Identifier: Apache-2.0
//
// Symmetric contrastive loss over a batch of paired embeddings.
//
//   l_i2t = -(1/N) sum_j log( exp(S_jj / tau) / sum_{k in D_j} exp(S_jk / tau) )
//   l_t2i = same with S transposed,   L = (l_i2t + l_t2i) / 2
//
// S_jk = cos(image_j, tab_k). By default D_j = {k != j}: the positive pair is
// left out of the denominator. With include_positive_in_denominator the
// denominator runs over all k (the usual CLIP form).
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "oculus/nn/matrix.hpp"

namespace oculus::align {

using nn::DenseMatrix;

struct AlignConfig {
  double temperature = 0.5;
  std::size_t batch_size = 64;
  std::size_t epochs = 50;
  double learning_rate = 1e-4;
  double weight_decay = 1e-2;
  std::size_t embed_dim = 32;
  bool include_positive_in_denominator = false;

  void validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ValidationError("temperature must be > 0");
    if (batch_size < 2) throw ValidationError("batch size must be at least 2");
    if (epochs < 1) throw ValidationError("epochs must be at least 1");
    if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0))
      throw ValidationError("learning rate and weight decay must be non-negative");
    if (embed_dim < 1) throw ValidationError("embedding dim must be positive");
  }

  friend bool operator==(const AlignConfig&, const AlignConfig&) = default;
};

struct ContrastiveLoss {
  double i2t = 0.0;
  double t2i = 0.0;
  double total = 0.0;
};

struct ContrastiveGrads {
  DenseMatrix image;  // dL_total / d image embeddings
  DenseMatrix tab;
};

namespace contrastive_detail {

struct Normalized {
  DenseMatrix unit;
  nn::Vector norms;
};

inline Normalized normalize_rows(const DenseMatrix& m) {
  Normalized out{m, nn::Vector(m.rows)};
  for (std::size_t r = 0; r < m.rows; ++r) {
    const auto row = m.row(r);
    const double n = nn::norm(row);
    if (!(n > 0.0) || !std::isfinite(n))
      throw DegenerateInputError("embedding " + std::to_string(r) + " has zero or non-finite norm");
    out.norms[r] = n;
    for (std::size_t c = 0; c < m.cols; ++c) out.unit(r, c) = m(r, c) / n;
  }
  return out;
}

inline void check_batch(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows != b.rows) throw ShapeError("contrastive loss: batch sizes differ");
  if (a.cols != b.cols) throw ShapeError("contrastive loss: embedding dims differ");
  if (a.rows < 2) throw DegenerateInputError("contrastive loss: degenerate batch (need at least 2 pairs)");
}

/// One direction. `row_major` selects S_jk (image->tab) or S_kj (tab->image).
/// Adds d(loss)/dS * weight into dS when dS is non-null.
inline double directional(const DenseMatrix& s, bool row_major, double tau, bool include_positive, double weight,
                          DenseMatrix* ds) {
  const std::size_t n = s.rows;
  auto at = [&](std::size_t j, std::size_t k) -> double { return row_major ? s(j, k) : s(k, j); };
  double loss = 0.0;
  std::vector<double> logits(n);
  for (std::size_t j = 0; j < n; ++j) {
    double mx = -INFINITY;
    for (std::size_t k = 0; k < n; ++k) {
      logits[k] = at(j, k) / tau;
      if ((include_positive || k != j) && logits[k] > mx) mx = logits[k];
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      if (include_positive || k != j) sum += std::exp(logits[k] - mx);
    const double lse = mx + std::log(sum);
    loss += lse - logits[j];
    if (ds != nullptr) {
      const double scale = weight / (static_cast<double>(n) * tau);
      for (std::size_t k = 0; k < n; ++k) {
        if (!include_positive && k == j) continue;
        const double p = std::exp(logits[k] - lse);
        (row_major ? (*ds)(j, k) : (*ds)(k, j)) += scale * p;
      }
      (*ds)(j, j) -= scale;
    }
  }
  return loss / static_cast<double>(n);
}

inline DenseMatrix similarity(const DenseMatrix& ua, const DenseMatrix& ub) {
  DenseMatrix s(ua.rows, ub.rows);
  for (std::size_t j = 0; j < ua.rows; ++j)
    for (std::size_t k = 0; k < ub.rows; ++k) s(j, k) = nn::dot(ua.row(j), ub.row(k));
  return s;
}

}  // namespace contrastive_detail

/// Cosine-similarity matrix S_jk = cos(a_j, b_k).
inline DenseMatrix cosine_matrix(const DenseMatrix& a, const DenseMatrix& b) {
  return contrastive_detail::similarity(contrastive_detail::normalize_rows(a).unit,
                                        contrastive_detail::normalize_rows(b).unit);
}

/// Image-to-biomarker direction only.
inline double info_nce_i2t(const DenseMatrix& image, const DenseMatrix& tab, const AlignConfig& cfg) {
  contrastive_detail::check_batch(image, tab);
  const auto s = cosine_matrix(image, tab);
  return contrastive_detail::directional(s, true, cfg.temperature, cfg.include_positive_in_denominator, 0.0, nullptr);
}

inline double info_nce_t2i(const DenseMatrix& image, const DenseMatrix& tab, const AlignConfig& cfg) {
  contrastive_detail::check_batch(image, tab);
  const auto s = cosine_matrix(image, tab);
  return contrastive_detail::directional(s, false, cfg.temperature, cfg.include_positive_in_denominator, 0.0, nullptr);
}

/// Both directions and their mean; fills `grads` when non-null.
inline ContrastiveLoss total_contrastive_loss(const DenseMatrix& image, const DenseMatrix& tab, const AlignConfig& cfg,
                                              ContrastiveGrads* grads = nullptr) {
  using namespace contrastive_detail;
  check_batch(image, tab);
  if (!(cfg.temperature > 0.0)) throw ValidationError("temperature must be > 0");
  const auto na = normalize_rows(image);
  const auto nb = normalize_rows(tab);
  const auto s = similarity(na.unit, nb.unit);
  const std::size_t n = s.rows;
  DenseMatrix ds(n, n);
  ContrastiveLoss out;
  out.i2t = directional(s, true, cfg.temperature, cfg.include_positive_in_denominator, 0.5, grads ? &ds : nullptr);
  out.t2i = directional(s, false, cfg.temperature, cfg.include_positive_in_denominator, 0.5, grads ? &ds : nullptr);
  out.total = 0.5 * (out.i2t + out.t2i);
  if (grads != nullptr) {
    const std::size_t d = image.cols;
    grads->image = DenseMatrix(n, d);
    grads->tab = DenseMatrix(n, d);
    // dS_jk/da_j = (v_k - S_jk u_j) / |a_j|;  dS_jk/db_k = (u_j - S_jk v_k) / |b_k|
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < n; ++k) {
        const double g = ds(j, k);
        if (g == 0.0) continue;
        const double ga = g / na.norms[j];
        const double gb = g / nb.norms[k];
        for (std::size_t c = 0; c < d; ++c) {
          grads->image(j, c) += ga * (nb.unit(k, c) - s(j, k) * na.unit(j, c));
          grads->tab(k, c) += gb * (na.unit(j, c) - s(j, k) * nb.unit(k, c));
        }
      }
    }
  }
  return out;
}

}  // namespace oculus::align
