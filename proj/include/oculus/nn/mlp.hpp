// SPDX-License-Identifier: Apache-2.0
//
// Multilayer perceptron with an explicit activation tape and hand-derived
// backward pass.
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "oculus/nn/matrix.hpp"

namespace oculus::nn {

enum class Activation { relu, tanh, identity };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "?";
}

inline Activation activation_from_string(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  throw ValidationError("unknown activation '" + std::string(s) + "'");
}

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::tanh: return std::tanh(x);
    case Activation::identity: return x;
  }
  return x;
}

// Derivative expressed through the pre-activation and the activated value.
inline double activate_grad(Activation a, double pre, double post) {
  switch (a) {
    case Activation::relu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: return 1.0 - post * post;
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

/// One affine layer; weight is (input dim) x (output dim).
struct DenseLayer {
  DenseMatrix weight;
  Vector bias;
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return weight.rows; }
  std::size_t out_dim() const { return weight.cols; }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct MlpParams {
  std::vector<DenseLayer> layers;
  /// Bumped whenever an optimiser mutates the parameters; tapes record it.
  std::uint64_t revision = 0;

  /// Glorot-initialised network. `dims` has layers+1 entries; the final
  /// layer always uses the identity activation.
  static MlpParams create(const std::vector<std::size_t>& dims, Activation hidden, Rng& rng) {
    if (dims.size() < 2) throw ShapeError("MLP needs at least an input and an output dim");
    MlpParams p;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
      DenseLayer layer;
      layer.weight = DenseMatrix(dims[k], dims[k + 1]);
      glorot_uniform(layer.weight.data, dims[k], dims[k + 1], rng);
      layer.bias.assign(dims[k + 1], 0.0);
      layer.activation = (k + 2 == dims.size()) ? Activation::identity : hidden;
      p.layers.push_back(std::move(layer));
    }
    return p;
  }

  std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

  void validate() const {
    if (layers.empty()) throw ShapeError("MLP has no layers");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto& l = layers[k];
      if (l.bias.size() != l.out_dim())
        throw ShapeError("layer " + std::to_string(k) + ": bias length " + std::to_string(l.bias.size()) +
                         " != output dim " + std::to_string(l.out_dim()));
      if (k + 1 < layers.size() && l.out_dim() != layers[k + 1].in_dim())
        throw ShapeError("layer " + std::to_string(k) + " output dim " + std::to_string(l.out_dim()) +
                         " != layer " + std::to_string(k + 1) + " input dim " +
                         std::to_string(layers[k + 1].in_dim()));
    }
    if (layers.back().activation != Activation::identity)
      throw ShapeError("final MLP layer must use the identity activation");
  }

  /// Zero-valued parameters of identical shape (gradient accumulator).
  MlpParams zeros_like() const {
    MlpParams g = *this;
    g.revision = 0;
    for (auto& l : g.layers) {
      std::fill(l.weight.data.begin(), l.weight.data.end(), 0.0);
      std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
    return g;
  }

  template <class F>
  void visit(std::string_view prefix, F&& f) {
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const std::string base = std::string(prefix) + "layers." + std::to_string(k);
      f(base + ".weight", std::span<double>(layers[k].weight.data));
      f(base + ".bias", std::span<double>(layers[k].bias));
    }
  }
  template <class F>
  void visit(std::string_view prefix, F&& f) const {
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const std::string base = std::string(prefix) + "layers." + std::to_string(k);
      f(base + ".weight", std::span<const double>(layers[k].weight.data));
      f(base + ".bias", std::span<const double>(layers[k].bias));
    }
  }

  friend bool operator==(const MlpParams& a, const MlpParams& b) { return a.layers == b.layers; }
};

/// Everything the backward pass needs from one forward call.
struct MlpTape {
  const MlpParams* params = nullptr;
  std::uint64_t revision = 0;
  std::vector<Vector> inputs;  // input of each layer
  std::vector<Vector> pre;     // pre-activation of each layer
  std::vector<Vector> post;    // activated output of each layer
};

struct MlpForward {
  Vector output;
  MlpTape tape;
};

inline MlpForward mlp_forward(const MlpParams& params, std::span<const double> input) {
  if (params.layers.empty()) throw ShapeError("MLP has no layers");
  MlpForward result;
  result.tape.params = &params;
  result.tape.revision = params.revision;
  Vector x(input.begin(), input.end());
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const auto& layer = params.layers[k];
    if (x.size() != layer.in_dim())
      throw ShapeError("layer " + std::to_string(k) + " expects input dim " + std::to_string(layer.in_dim()) +
                       ", got " + std::to_string(x.size()));
    Vector pre(layer.bias);
    gemv_accumulate(x, layer.weight, pre);
    Vector post(pre.size());
    for (std::size_t j = 0; j < pre.size(); ++j) post[j] = activate(layer.activation, pre[j]);
    result.tape.inputs.push_back(std::move(x));
    result.tape.pre.push_back(std::move(pre));
    x = post;
    result.tape.post.push_back(std::move(post));
  }
  result.output = std::move(x);
  return result;
}

/// Output only; no tape is recorded.
inline Vector mlp_apply(const MlpParams& params, std::span<const double> input) {
  Vector x(input.begin(), input.end());
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const auto& layer = params.layers[k];
    if (x.size() != layer.in_dim())
      throw ShapeError("layer " + std::to_string(k) + " expects input dim " + std::to_string(layer.in_dim()) +
                       ", got " + std::to_string(x.size()));
    Vector y(layer.bias);
    gemv_accumulate(x, layer.weight, y);
    for (double& v : y) v = activate(layer.activation, v);
    x = std::move(y);
  }
  return x;
}

/// Accumulates parameter gradients into `grads` and returns dL/dinput.
inline Vector mlp_backward(const MlpParams& params, const MlpTape& tape, std::span<const double> output_grad,
                           MlpParams& grads) {
  if (tape.params != &params || tape.revision != params.revision || tape.inputs.size() != params.layers.size())
    throw ContractError("mlp_backward: tape was not produced by a forward pass over these parameters");
  if (grads.layers.size() != params.layers.size()) throw ShapeError("mlp_backward: gradient layer count mismatch");
  if (output_grad.size() != params.out_dim())
    throw ShapeError("mlp_backward: output gradient dim " + std::to_string(output_grad.size()) + " != " +
                     std::to_string(params.out_dim()));
  Vector g(output_grad.begin(), output_grad.end());
  for (std::size_t kk = params.layers.size(); kk-- > 0;) {
    const auto& layer = params.layers[kk];
    auto& gl = grads.layers[kk];
    Vector delta(g.size());
    for (std::size_t j = 0; j < g.size(); ++j)
      delta[j] = g[j] * activate_grad(layer.activation, tape.pre[kk][j], tape.post[kk][j]);
    outer_accumulate(tape.inputs[kk], delta, gl.weight);
    for (std::size_t j = 0; j < delta.size(); ++j) gl.bias[j] += delta[j];
    Vector dx(layer.in_dim(), 0.0);
    gemv_transpose_accumulate(layer.weight, delta, dx);
    g = std::move(dx);
  }
  return g;
}

struct MlpBackward {
  MlpParams grads;
  Vector input_grad;
};

inline MlpBackward mlp_backward(const MlpParams& params, const MlpTape& tape, std::span<const double> output_grad) {
  MlpBackward out{params.zeros_like(), {}};
  out.input_grad = mlp_backward(params, tape, output_grad, out.grads);
  return out;
}

}  // namespace oculus::nn
