// SPDX-License-Identifier: Apache-2.0
//
// Local-window convolution (no padding) over channels-last feature maps.
#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "oculus/nn/mlp.hpp"

namespace oculus::nn {

struct FeatureShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::size_t size() const { return height * width * channels; }
  friend bool operator==(const FeatureShape&, const FeatureShape&) = default;
};

struct Conv2dParams {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  Activation activation = Activation::tanh;
  DenseMatrix weight;  // (kernel*kernel*in_channels) x out_channels
  Vector bias;
  std::uint64_t revision = 0;

  static Conv2dParams create(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
                             Activation act, Rng& rng) {
    if (kernel == 0 || stride == 0) throw ShapeError("conv kernel and stride must be positive");
    Conv2dParams p;
    p.in_channels = in_ch;
    p.out_channels = out_ch;
    p.kernel = kernel;
    p.stride = stride;
    p.activation = act;
    p.weight = DenseMatrix(kernel * kernel * in_ch, out_ch);
    glorot_uniform(p.weight.data, kernel * kernel * in_ch, out_ch, rng);
    p.bias.assign(out_ch, 0.0);
    return p;
  }

  FeatureShape output_shape(const FeatureShape& in) const {
    if (in.channels != in_channels)
      throw ShapeError("conv expects " + std::to_string(in_channels) + " input channels, got " +
                       std::to_string(in.channels));
    if (in.height < kernel || in.width < kernel) throw ShapeError("conv kernel larger than feature map");
    return {(in.height - kernel) / stride + 1, (in.width - kernel) / stride + 1, out_channels};
  }

  Conv2dParams zeros_like() const {
    Conv2dParams g = *this;
    g.revision = 0;
    std::fill(g.weight.data.begin(), g.weight.data.end(), 0.0);
    std::fill(g.bias.begin(), g.bias.end(), 0.0);
    return g;
  }

  template <class F>
  void visit(std::string_view prefix, F&& f) {
    f(std::string(prefix) + "weight", std::span<double>(weight.data));
    f(std::string(prefix) + "bias", std::span<double>(bias));
  }
  template <class F>
  void visit(std::string_view prefix, F&& f) const {
    f(std::string(prefix) + "weight", std::span<const double>(weight.data));
    f(std::string(prefix) + "bias", std::span<const double>(bias));
  }

  friend bool operator==(const Conv2dParams& a, const Conv2dParams& b) {
    return a.in_channels == b.in_channels && a.out_channels == b.out_channels && a.kernel == b.kernel &&
           a.stride == b.stride && a.activation == b.activation && a.weight == b.weight && a.bias == b.bias;
  }
};

struct Conv2dTape {
  const Conv2dParams* params = nullptr;
  std::uint64_t revision = 0;
  FeatureShape in_shape;
  FeatureShape out_shape;
  Vector input;
  Vector pre;
  Vector post;
};

namespace detail {
inline void gather_patch(const Conv2dParams& p, const FeatureShape& in, std::span<const double> x, std::size_t oy,
                         std::size_t ox, std::span<double> patch) {
  std::size_t k = 0;
  for (std::size_t dy = 0; dy < p.kernel; ++dy) {
    const std::size_t y = oy * p.stride + dy;
    for (std::size_t dx = 0; dx < p.kernel; ++dx) {
      const std::size_t xx = ox * p.stride + dx;
      const double* src = x.data() + (y * in.width + xx) * in.channels;
      for (std::size_t c = 0; c < in.channels; ++c) patch[k++] = src[c];
    }
  }
}
}  // namespace detail

inline Vector conv2d_forward(const Conv2dParams& p, const FeatureShape& in, std::span<const double> x,
                             Conv2dTape* tape = nullptr) {
  if (x.size() != in.size()) throw ShapeError("conv input length does not match its shape");
  const FeatureShape out = p.output_shape(in);
  Vector pre(out.size());
  Vector post(out.size());
  Vector patch(p.weight.rows);
  for (std::size_t oy = 0; oy < out.height; ++oy) {
    for (std::size_t ox = 0; ox < out.width; ++ox) {
      detail::gather_patch(p, in, x, oy, ox, patch);
      std::span<double> dst(pre.data() + (oy * out.width + ox) * out.channels, out.channels);
      std::copy(p.bias.begin(), p.bias.end(), dst.begin());
      gemv_accumulate(patch, p.weight, dst);
    }
  }
  for (std::size_t i = 0; i < pre.size(); ++i) post[i] = activate(p.activation, pre[i]);
  if (tape != nullptr) {
    tape->params = &p;
    tape->revision = p.revision;
    tape->in_shape = in;
    tape->out_shape = out;
    tape->input.assign(x.begin(), x.end());
    tape->pre = pre;
    tape->post = post;
  }
  return post;
}

/// Accumulates into `grads`; returns dL/dinput when `want_input_grad`.
inline Vector conv2d_backward(const Conv2dParams& p, const Conv2dTape& tape, std::span<const double> out_grad,
                              Conv2dParams& grads, bool want_input_grad) {
  if (tape.params != &p || tape.revision != p.revision)
    throw ContractError("conv2d_backward: stale or foreign tape");
  if (out_grad.size() != tape.out_shape.size()) throw ShapeError("conv2d_backward: gradient size mismatch");
  const auto& in = tape.in_shape;
  const auto& out = tape.out_shape;
  Vector dx(want_input_grad ? in.size() : 0, 0.0);
  Vector patch(p.weight.rows);
  Vector dpatch(p.weight.rows);
  Vector delta(out.channels);
  for (std::size_t oy = 0; oy < out.height; ++oy) {
    for (std::size_t ox = 0; ox < out.width; ++ox) {
      const std::size_t base = (oy * out.width + ox) * out.channels;
      for (std::size_t c = 0; c < out.channels; ++c)
        delta[c] = out_grad[base + c] * activate_grad(p.activation, tape.pre[base + c], tape.post[base + c]);
      detail::gather_patch(p, in, tape.input, oy, ox, patch);
      outer_accumulate(patch, delta, grads.weight);
      for (std::size_t c = 0; c < out.channels; ++c) grads.bias[c] += delta[c];
      if (want_input_grad) {
        std::fill(dpatch.begin(), dpatch.end(), 0.0);
        gemv_transpose_accumulate(p.weight, delta, dpatch);
        std::size_t k = 0;
        for (std::size_t dy = 0; dy < p.kernel; ++dy) {
          const std::size_t y = oy * p.stride + dy;
          for (std::size_t ddx = 0; ddx < p.kernel; ++ddx) {
            const std::size_t xx = ox * p.stride + ddx;
            double* dst = dx.data() + (y * in.width + xx) * in.channels;
            for (std::size_t c = 0; c < in.channels; ++c) dst[c] += dpatch[k++];
          }
        }
      }
    }
  }
  return dx;
}

}  // namespace oculus::nn
