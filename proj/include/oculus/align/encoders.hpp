// SPDX-License-Identifier: Apache-2.0
//
// Image encoders (two local-window conv layers, flatten, MLP head) and the
// tabular biomarker encoder (standardize, 2-layer MLP).
#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "oculus/cohort/cohort.hpp"
#include "oculus/nn/adamw.hpp"
#include "oculus/nn/conv.hpp"
#include "oculus/nn/mlp.hpp"

namespace oculus::align {

using nn::Vector;

enum class EmbeddingRole { z_oct, z_cfp, z_tab, z_oct_projected, h_oct, h_cfp };

inline std::string_view to_string(EmbeddingRole r) {
  static constexpr std::array<std::string_view, 6> names{"z_oct", "z_cfp", "z_tab", "z_oct_projected", "h_oct", "h_cfp"};
  return names[static_cast<std::size_t>(r)];
}

/// A dense vector tagged with what produced it.
struct Embedding {
  EmbeddingRole role = EmbeddingRole::z_oct;
  Vector values;

  Embedding() = default;
  Embedding(EmbeddingRole r, Vector v) : role(r), values(std::move(v)) {
    for (double x : values)
      if (!std::isfinite(x)) throw ValidationError(std::string("non-finite value in ") + std::string(to_string(role)) + " embedding");
  }

  std::size_t dim() const { return values.size(); }
  friend bool operator==(const Embedding&, const Embedding&) = default;
};

/// Biomarker indices each encoder reads: the 31 OCT markers or the 6 CFP ones.
inline std::vector<std::size_t> biomarker_indices(Modality m) {
  std::vector<std::size_t> out;
  const std::size_t lo = m == Modality::oct ? 0 : kNumOctBiomarkers;
  const std::size_t hi = m == Modality::oct ? kNumOctBiomarkers : kNumBiomarkers;
  for (std::size_t i = lo; i < hi; ++i) out.push_back(i);
  return out;
}

/// Per-biomarker z-scoring with statistics from a training split.
struct Standardizer {
  std::vector<std::size_t> indices;
  Vector mean;
  Vector sd;

  static Standardizer fit(const Cohort& train, std::vector<std::size_t> indices) {
    if (train.size() < 2) throw ValidationError("standardization needs at least 2 samples");
    Standardizer s;
    s.indices = std::move(indices);
    s.mean.assign(s.indices.size(), 0.0);
    s.sd.assign(s.indices.size(), 0.0);
    const double n = static_cast<double>(train.size());
    for (const auto& sample : train)
      for (std::size_t k = 0; k < s.indices.size(); ++k) s.mean[k] += sample.biomarkers[s.indices[k]];
    for (double& m : s.mean) m /= n;
    for (const auto& sample : train)
      for (std::size_t k = 0; k < s.indices.size(); ++k) {
        const double d = sample.biomarkers[s.indices[k]] - s.mean[k];
        s.sd[k] += d * d;
      }
    for (double& v : s.sd) v = std::sqrt(v / (n - 1.0));
    s.validate();
    return s;
  }

  void validate() const {
    if (indices.empty() || mean.size() != indices.size() || sd.size() != indices.size())
      throw ValidationError("standardization statistics are missing or inconsistent");
    for (std::size_t k = 0; k < indices.size(); ++k) {
      if (indices[k] >= kNumBiomarkers) throw ValidationError("standardization index out of range");
      if (!std::isfinite(mean[k]) || !(sd[k] > 0.0) || !std::isfinite(sd[k]))
        throw ValidationError("standardization statistics for " + std::string(biomarker_spec(indices[k]).name) +
                              " are not usable");
    }
  }

  Vector apply(const BiomarkerVector& b) const {
    validate();
    Vector out(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const double v = b[indices[k]];
      if (!std::isfinite(v))
        throw ValidationError("biomarker " + std::string(biomarker_spec(indices[k]).name) + " is not finite");
      out[k] = (v - mean[k]) / sd[k];
    }
    return out;
  }

  friend bool operator==(const Standardizer&, const Standardizer&) = default;
};

struct ImageEncoder {
  Modality modality = Modality::oct;
  double pixel_mean = 0.0;
  double pixel_scale = 1.0;
  nn::Conv2dParams conv1;
  nn::Conv2dParams conv2;
  nn::MlpParams head;

  static constexpr nn::FeatureShape kInputShape{kScanSize, kScanSize, 1};

  /// conv 1->8 (4x4, stride 4), conv 8->16 (2x2, stride 2), MLP 1024->64->d.
  static ImageEncoder create(Modality m, std::size_t embed_dim, Rng& rng) {
    ImageEncoder e;
    e.modality = m;
    e.conv1 = nn::Conv2dParams::create(1, 8, 4, 4, nn::Activation::tanh, rng);
    e.conv2 = nn::Conv2dParams::create(8, 16, 2, 2, nn::Activation::tanh, rng);
    const auto flat = e.conv2.output_shape(e.conv1.output_shape(kInputShape)).size();
    e.head = nn::MlpParams::create({flat, 64, embed_dim}, nn::Activation::tanh, rng);
    return e;
  }

  std::size_t embed_dim() const { return head.out_dim(); }

  template <class F>
  void visit(std::string_view prefix, F&& f) {
    conv1.visit(std::string(prefix) + "conv1.", f);
    conv2.visit(std::string(prefix) + "conv2.", f);
    head.visit(std::string(prefix) + "head.", f);
  }
  template <class F>
  void visit(std::string_view prefix, F&& f) const {
    conv1.visit(std::string(prefix) + "conv1.", f);
    conv2.visit(std::string(prefix) + "conv2.", f);
    head.visit(std::string(prefix) + "head.", f);
  }

  void bump_revision() {
    ++conv1.revision;
    ++conv2.revision;
    ++head.revision;
  }

  ImageEncoder zeros_like() const {
    ImageEncoder g = *this;
    g.conv1 = conv1.zeros_like();
    g.conv2 = conv2.zeros_like();
    g.head = head.zeros_like();
    return g;
  }

  Vector normalize(std::span<const float> pixels) const {
    if (pixels.size() != kInputShape.size())
      throw ShapeError("image encoder expects " + std::to_string(kInputShape.size()) + " pixels, got " +
                       std::to_string(pixels.size()));
    Vector x(pixels.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (static_cast<double>(pixels[i]) - pixel_mean) / pixel_scale;
    return x;
  }

  friend bool operator==(const ImageEncoder& a, const ImageEncoder& b) {
    return a.modality == b.modality && a.pixel_mean == b.pixel_mean && a.pixel_scale == b.pixel_scale &&
           a.conv1 == b.conv1 && a.conv2 == b.conv2 && a.head == b.head;
  }
};

struct ImageTape {
  nn::Conv2dTape conv1;
  nn::Conv2dTape conv2;
  nn::MlpTape head;
};

/// Forward pass over already-normalized pixels.
inline Vector image_forward(const ImageEncoder& e, std::span<const double> x, ImageTape* tape = nullptr) {
  const auto s1 = e.conv1.output_shape(ImageEncoder::kInputShape);
  const Vector a1 = nn::conv2d_forward(e.conv1, ImageEncoder::kInputShape, x, tape ? &tape->conv1 : nullptr);
  const Vector a2 = nn::conv2d_forward(e.conv2, s1, a1, tape ? &tape->conv2 : nullptr);
  if (tape == nullptr) return nn::mlp_apply(e.head, a2);
  auto fwd = nn::mlp_forward(e.head, a2);
  tape->head = std::move(fwd.tape);
  return std::move(fwd.output);
}

/// Accumulates parameter gradients for dL/dz into `grads`.
inline void image_backward(const ImageEncoder& e, const ImageTape& tape, std::span<const double> dz,
                           ImageEncoder& grads) {
  const Vector d2 = nn::mlp_backward(e.head, tape.head, dz, grads.head);
  const Vector d1 = nn::conv2d_backward(e.conv2, tape.conv2, d2, grads.conv2, true);
  (void)nn::conv2d_backward(e.conv1, tape.conv1, d1, grads.conv1, false);
}

inline Embedding encode_scan(const ImageEncoder& e, const SyntheticScan& scan) {
  if (scan.modality != e.modality)
    throw ContractError("encoder for " + std::string(to_string(e.modality)) + " received a " +
                        std::string(to_string(scan.modality)) + " scan");
  return Embedding(e.modality == Modality::oct ? EmbeddingRole::z_oct : EmbeddingRole::z_cfp,
                   image_forward(e, e.normalize(scan.pixels)));
}

inline Embedding encode_oct(const ImageEncoder& e, const SyntheticScan& scan) {
  if (e.modality != Modality::oct || scan.modality != Modality::oct)
    throw ContractError("encode_oct requires an OCT encoder and an OCT scan");
  return encode_scan(e, scan);
}

struct TabularEncoder {
  Standardizer stats;
  nn::MlpParams mlp;

  /// MLP (#markers)->64->d with tanh hidden layer.
  static TabularEncoder create(Standardizer stats, std::size_t embed_dim, Rng& rng) {
    TabularEncoder t;
    const std::size_t in = stats.indices.size();
    t.stats = std::move(stats);
    t.mlp = nn::MlpParams::create({in, 64, embed_dim}, nn::Activation::tanh, rng);
    return t;
  }

  template <class F>
  void visit(std::string_view prefix, F&& f) {
    mlp.visit(std::string(prefix) + "mlp.", f);
  }
  template <class F>
  void visit(std::string_view prefix, F&& f) const {
    mlp.visit(std::string(prefix) + "mlp.", f);
  }
  void bump_revision() { ++mlp.revision; }
  TabularEncoder zeros_like() const {
    TabularEncoder g = *this;
    g.mlp = mlp.zeros_like();
    return g;
  }

  friend bool operator==(const TabularEncoder& a, const TabularEncoder& b) {
    return a.stats == b.stats && a.mlp == b.mlp;
  }
};

inline Embedding encode_biomarkers(const TabularEncoder& t, const BiomarkerVector& b) {
  return Embedding(EmbeddingRole::z_tab, nn::mlp_apply(t.mlp, t.stats.apply(b)));
}

}  // namespace oculus::align
