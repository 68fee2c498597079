// SPDX-License-Identifier: Apache-2.0
//
// Contrastive training of an image encoder against a tabular encoder, plus
// retrieval evaluation.
#pragma once

#include <functional>
#include <numeric>
#include <optional>
#include <vector>

#include "oculus/align/contrastive.hpp"
#include "oculus/align/encoders.hpp"
#include "oculus/nn/adamw.hpp"

namespace oculus::align {

/// The two encoders trained together.
struct AlignedPair {
  ImageEncoder image;
  TabularEncoder tab;

  template <class F>
  void visit(std::string_view prefix, F&& f) {
    image.visit(std::string(prefix) + "image.", f);
    tab.visit(std::string(prefix) + "tab.", f);
  }
  template <class F>
  void visit(std::string_view prefix, F&& f) const {
    image.visit(std::string(prefix) + "image.", f);
    tab.visit(std::string(prefix) + "tab.", f);
  }
  void bump_revision() {
    image.bump_revision();
    tab.bump_revision();
  }
  AlignedPair zeros_like() const { return {image.zeros_like(), tab.zeros_like()}; }

  friend bool operator==(const AlignedPair&, const AlignedPair&) = default;
};

struct EpochLoss {
  std::size_t epoch = 0;  // 1-based
  double i2t = 0.0;
  double t2i = 0.0;
  double total = 0.0;

  friend bool operator==(const EpochLoss&, const EpochLoss&) = default;
};

struct AlignResult {
  AlignedPair model;
  AlignConfig config;
  nn::OptimState optim;
  std::vector<EpochLoss> curve;
  std::uint64_t seed = 0;
};

namespace train_detail {
enum Stream : std::uint64_t { init = 11, epoch_order = 12 };

inline const SyntheticScan& scan_of(const CohortSample& s, Modality m) { return m == Modality::oct ? s.oct : s.cfp; }

/// Mean and standard deviation of every pixel in the training split.
inline std::pair<double, double> pixel_stats(const Cohort& train, Modality m) {
  double sum = 0.0;
  double sq = 0.0;
  std::size_t n = 0;
  for (const auto& s : train)
    for (float p : scan_of(s, m).pixels) {
      sum += p;
      sq += static_cast<double>(p) * p;
      ++n;
    }
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(sq / static_cast<double>(n) - mean * mean, 1e-12);
  return {mean, std::sqrt(var)};
}
}  // namespace train_detail

/// Fresh encoders for modality `m`; tabular statistics come from `train`.
inline AlignedPair init_aligned_pair(const Cohort& train, Modality m, std::size_t embed_dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, train_detail::init));
  AlignedPair pair;
  pair.image = ImageEncoder::create(m, embed_dim, rng);
  const auto [mean, sd] = train_detail::pixel_stats(train, m);
  pair.image.pixel_mean = mean;
  pair.image.pixel_scale = sd;
  pair.tab = TabularEncoder::create(Standardizer::fit(train, biomarker_indices(m)), embed_dim, rng);
  return pair;
}

using EpochCallback = std::function<void(const EpochLoss&)>;

/// Loss and gradient for one batch of (image input, tabular input) rows.
inline ContrastiveLoss batch_step(const AlignedPair& model, const std::vector<const Vector*>& images,
                                  const std::vector<const Vector*>& tabs, const AlignConfig& cfg, AlignedPair* grads) {
  const std::size_t bs = images.size();
  const std::size_t d = model.image.embed_dim();
  DenseMatrix zi(bs, d);
  DenseMatrix zt(bs, d);
  std::vector<ImageTape> image_tapes(grads ? bs : 0);
  std::vector<nn::MlpTape> tab_tapes(grads ? bs : 0);
  for (std::size_t r = 0; r < bs; ++r) {
    const Vector a = image_forward(model.image, *images[r], grads ? &image_tapes[r] : nullptr);
    Vector b;
    if (grads) {
      auto fwd = nn::mlp_forward(model.tab.mlp, *tabs[r]);
      b = std::move(fwd.output);
      tab_tapes[r] = std::move(fwd.tape);
    } else {
      b = nn::mlp_apply(model.tab.mlp, *tabs[r]);
    }
    std::copy(a.begin(), a.end(), zi.row(r).begin());
    std::copy(b.begin(), b.end(), zt.row(r).begin());
  }
  ContrastiveGrads g;
  const auto loss = total_contrastive_loss(zi, zt, cfg, grads ? &g : nullptr);
  if (grads) {
    for (std::size_t r = 0; r < bs; ++r) {
      image_backward(model.image, image_tapes[r], g.image.row(r), grads->image);
      (void)nn::mlp_backward(model.tab.mlp, tab_tapes[r], g.tab.row(r), grads->tab.mlp);
    }
  }
  return loss;
}

/// Trains on `train` for cfg.epochs epochs of seeded shuffled batches (the
/// final partial batch is dropped). Deterministic in `seed`.
inline AlignResult train_alignment(const Cohort& train, Modality m, const AlignConfig& cfg, std::uint64_t seed,
                                   const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train.size() < 2 * cfg.batch_size)
    throw ValidationError("alignment needs at least 2 * batch_size = " + std::to_string(2 * cfg.batch_size) +
                          " training samples, got " + std::to_string(train.size()));
  AlignResult result;
  result.config = cfg;
  result.seed = seed;
  result.model = init_aligned_pair(train, m, cfg.embed_dim, seed);
  result.optim.learning_rate = cfg.learning_rate;
  result.optim.weight_decay = cfg.weight_decay;
  auto& model = result.model;

  std::vector<Vector> images;
  std::vector<Vector> tabs;
  images.reserve(train.size());
  tabs.reserve(train.size());
  for (const auto& s : train) {
    images.push_back(model.image.normalize(train_detail::scan_of(s, m).pixels));
    tabs.push_back(model.tab.stats.apply(s.biomarkers));
  }

  std::vector<std::size_t> order(train.size());
  const std::size_t steps = train.size() / cfg.batch_size;
  auto grads = model.zeros_like();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, train_detail::epoch_order, epoch));
    rng.shuffle(order);
    EpochLoss acc{epoch, 0.0, 0.0, 0.0};
    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<const Vector*> bi(cfg.batch_size);
      std::vector<const Vector*> bt(cfg.batch_size);
      for (std::size_t r = 0; r < cfg.batch_size; ++r) {
        bi[r] = &images[order[step * cfg.batch_size + r]];
        bt[r] = &tabs[order[step * cfg.batch_size + r]];
      }
      nn::zero_fill(grads);
      ContrastiveLoss loss;
      try {
        loss = batch_step(model, bi, bt, cfg, &grads);
      } catch (const DegenerateInputError& e) {
        throw TrainingError("alignment diverged at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step + 1) + ": " + e.what());
      }
      if (!std::isfinite(loss.total))
        throw TrainingError("non-finite alignment loss at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step + 1));
      try {
        nn::adamw_step(model, grads, result.optim);
      } catch (const TrainingError& e) {
        throw TrainingError("alignment diverged at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step + 1) + ": " + e.what());
      }
      acc.i2t += loss.i2t;
      acc.t2i += loss.t2i;
      acc.total += loss.total;
    }
    acc.i2t /= static_cast<double>(steps);
    acc.t2i /= static_cast<double>(steps);
    acc.total /= static_cast<double>(steps);
    result.curve.push_back(acc);
    if (on_epoch) on_epoch(acc);
  }
  return result;
}

/// Fraction of queries whose paired gallery item ranks within the top k by
/// cosine similarity. Ties are broken in favour of the lower gallery index.
inline double retrieval_topk(const std::vector<Vector>& queries, const std::vector<Vector>& gallery, std::size_t k) {
  if (queries.empty()) throw EvaluationError("retrieval over an empty held-out set");
  if (queries.size() != gallery.size()) throw ShapeError("retrieval: query and gallery counts differ");
  if (k == 0) throw ValidationError("retrieval: k must be positive");
  const std::size_t n = queries.size();
  const std::size_t d = queries[0].size();
  DenseMatrix q(n, d);
  DenseMatrix g(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    if (queries[i].size() != d || gallery[i].size() != d) throw ShapeError("retrieval: embedding dims differ");
    std::copy(queries[i].begin(), queries[i].end(), q.row(i).begin());
    std::copy(gallery[i].begin(), gallery[i].end(), g.row(i).begin());
  }
  const auto s = cosine_matrix(q, g);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t rank = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (s(i, j) > s(i, i) || (s(i, j) == s(i, i) && j < i)) ++rank;
    }
    hits += rank < k;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

/// Scans of `held_out` retrieved against their own biomarker embeddings.
inline double retrieval_topk(const AlignedPair& model, const Cohort& held_out, std::size_t k) {
  if (held_out.empty()) throw EvaluationError("retrieval over an empty held-out set");
  std::vector<Vector> q;
  std::vector<Vector> g;
  for (const auto& s : held_out) {
    q.push_back(encode_scan(model.image, train_detail::scan_of(s, model.image.modality)).values);
    g.push_back(encode_biomarkers(model.tab, s.biomarkers).values);
  }
  return retrieval_topk(q, g, k);
}

}  // namespace oculus::align
