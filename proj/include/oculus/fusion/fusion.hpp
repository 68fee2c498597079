// SPDX-License-Identifier: Apache-2.0
//
// Projection of frozen image embeddings into the decoder's token space and
// assembly of the decoder prefix [h_cfp, h_oct, prompt tokens...].
#pragma once

#include <string>
#include <vector>

#include "oculus/align/encoders.hpp"
#include "oculus/nn/mlp.hpp"

namespace oculus::fusion {

using align::Embedding;
using align::EmbeddingRole;
using nn::Vector;

inline constexpr std::size_t kDefaultProjectedDim = 32;  // d_m
inline constexpr std::size_t kDefaultTextDim = 64;       // d_t
inline constexpr std::size_t kProjectorHidden = 64;

/// OCT projector (d -> d_m) and the feature-to-text mapper (d_m -> d_t),
/// the latter shared by the CFP and projected-OCT paths.
struct ProjectorParams {
  nn::MlpParams oct_projector;
  nn::MlpParams text_mapper;

  static ProjectorParams create(std::size_t oct_dim, std::size_t projected_dim, std::size_t text_dim, Rng& rng) {
    ProjectorParams p;
    p.oct_projector = nn::MlpParams::create({oct_dim, kProjectorHidden, projected_dim}, nn::Activation::tanh, rng);
    p.text_mapper = nn::MlpParams::create({projected_dim, kProjectorHidden, text_dim}, nn::Activation::tanh, rng);
    p.validate();
    return p;
  }

  std::size_t oct_dim() const { return oct_projector.in_dim(); }
  std::size_t projected_dim() const { return text_mapper.in_dim(); }
  std::size_t text_dim() const { return text_mapper.out_dim(); }

  void validate() const {
    oct_projector.validate();
    text_mapper.validate();
    if (oct_projector.out_dim() != text_mapper.in_dim())
      throw ShapeError("OCT projector emits " + std::to_string(oct_projector.out_dim()) +
                       " dims but the text mapper expects " + std::to_string(text_mapper.in_dim()));
  }

  template <class F>
  void visit(std::string_view prefix, F&& f) {
    oct_projector.visit(std::string(prefix) + "oct_projector.", f);
    text_mapper.visit(std::string(prefix) + "text_mapper.", f);
  }
  template <class F>
  void visit(std::string_view prefix, F&& f) const {
    oct_projector.visit(std::string(prefix) + "oct_projector.", f);
    text_mapper.visit(std::string(prefix) + "text_mapper.", f);
  }
  void bump_revision() {
    ++oct_projector.revision;
    ++text_mapper.revision;
  }
  ProjectorParams zeros_like() const { return {oct_projector.zeros_like(), text_mapper.zeros_like()}; }

  friend bool operator==(const ProjectorParams&, const ProjectorParams&) = default;
};

inline Embedding project_oct(const Embedding& z, const ProjectorParams& p) {
  if (z.role != EmbeddingRole::z_oct)
    throw ContractError("project_oct expects a z_oct embedding, got " + std::string(to_string(z.role)));
  if (z.dim() != p.oct_dim())
    throw ShapeError("OCT embedding has dim " + std::to_string(z.dim()) + ", projector expects " +
                     std::to_string(p.oct_dim()));
  return Embedding(EmbeddingRole::z_oct_projected, nn::mlp_apply(p.oct_projector, z.values));
}

inline std::vector<Embedding> project_oct(const std::vector<Embedding>& batch, const ProjectorParams& p) {
  std::vector<Embedding> out;
  out.reserve(batch.size());
  for (const auto& z : batch) out.push_back(project_oct(z, p));
  return out;
}

/// Shared mapper. z_cfp -> h_cfp, z_oct_projected -> h_oct.
inline Embedding feature_to_text(const Embedding& e, const ProjectorParams& p) {
  EmbeddingRole out_role;
  if (e.role == EmbeddingRole::z_cfp) {
    out_role = EmbeddingRole::h_cfp;
  } else if (e.role == EmbeddingRole::z_oct_projected) {
    out_role = EmbeddingRole::h_oct;
  } else {
    throw ContractError("feature_to_text accepts z_cfp or z_oct_projected, got " + std::string(to_string(e.role)));
  }
  if (e.dim() != p.projected_dim())
    throw ContractError("feature_to_text expects dim " + std::to_string(p.projected_dim()) + ", got " +
                        std::to_string(e.dim()));
  return Embedding(out_role, nn::mlp_apply(p.text_mapper, e.values));
}

/// Decoder prefix. Rows run CFP token, OCT token, then prompt tokens.
struct FusedSequence {
  std::vector<Vector> visual_tokens;
  std::vector<Vector> prompt_tokens;

  std::size_t total_length() const { return visual_tokens.size() + prompt_tokens.size(); }
  std::size_t dim() const { return visual_tokens.empty() ? 0 : visual_tokens.front().size(); }

  const Vector& row(std::size_t i) const {
    return i < visual_tokens.size() ? visual_tokens[i] : prompt_tokens.at(i - visual_tokens.size());
  }

  friend bool operator==(const FusedSequence&, const FusedSequence&) = default;
};

inline FusedSequence fuse_sequence(const Embedding& h_cfp, const Embedding& h_oct, std::vector<Vector> prompt_embeds) {
  if (h_cfp.role != EmbeddingRole::h_cfp || h_oct.role != EmbeddingRole::h_oct)
    throw ContractError("fuse_sequence expects (h_cfp, h_oct), got (" + std::string(to_string(h_cfp.role)) + ", " +
                        std::string(to_string(h_oct.role)) + ")");
  const std::size_t d = h_cfp.dim();
  if (h_oct.dim() != d) throw ShapeError("CFP and OCT tokens differ in dim");
  for (std::size_t i = 0; i < prompt_embeds.size(); ++i)
    if (prompt_embeds[i].size() != d)
      throw ShapeError("prompt token " + std::to_string(i) + " has dim " + std::to_string(prompt_embeds[i].size()) +
                       ", expected " + std::to_string(d));
  return {{h_cfp.values, h_oct.values}, std::move(prompt_embeds)};
}

/// Forward state of the two visual paths for one sample, kept for backprop.
struct VisualTape {
  nn::MlpTape projector;
  nn::MlpTape mapper_oct;
  nn::MlpTape mapper_cfp;
};

struct VisualTokens {
  Embedding h_cfp;
  Embedding h_oct;
};

/// Both visual tokens for one sample; records a tape when `tape` is non-null.
inline VisualTokens visual_tokens(const ProjectorParams& p, const Embedding& z_oct, const Embedding& z_cfp,
                                  VisualTape* tape = nullptr) {
  if (tape == nullptr) return {feature_to_text(z_cfp, p), feature_to_text(project_oct(z_oct, p), p)};
  (void)project_oct(z_oct, p);  // role and dim checks
  (void)feature_to_text(z_cfp, p);
  auto proj = nn::mlp_forward(p.oct_projector, z_oct.values);
  auto oct = nn::mlp_forward(p.text_mapper, proj.output);
  auto cfp = nn::mlp_forward(p.text_mapper, z_cfp.values);
  tape->projector = std::move(proj.tape);
  tape->mapper_oct = std::move(oct.tape);
  tape->mapper_cfp = std::move(cfp.tape);
  return {Embedding(EmbeddingRole::h_cfp, std::move(cfp.output)), Embedding(EmbeddingRole::h_oct, std::move(oct.output))};
}

/// Accumulates projector gradients given dL/dh_cfp and dL/dh_oct. Both
/// mapper paths add into the same text_mapper gradient.
inline void visual_backward(const ProjectorParams& p, const VisualTape& tape, std::span<const double> d_cfp,
                            std::span<const double> d_oct, ProjectorParams& grads) {
  (void)nn::mlp_backward(p.text_mapper, tape.mapper_cfp, d_cfp, grads.text_mapper);
  const Vector d_projected = nn::mlp_backward(p.text_mapper, tape.mapper_oct, d_oct, grads.text_mapper);
  (void)nn::mlp_backward(p.oct_projector, tape.projector, d_projected, grads.oct_projector);
}

}  // namespace oculus::fusion
