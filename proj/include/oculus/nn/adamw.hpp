// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oculus/nn/matrix.hpp"

namespace oculus::nn {

/// Anything exposing `visit(prefix, fn(name, span))` in const and mutable form.
template <class M>
concept ParameterSet = requires(M& m, const M& cm) {
  m.visit("", [](const std::string&, std::span<double>) {});
  cm.visit("", [](const std::string&, std::span<const double>) {});
};

template <ParameterSet M>
void bump_revision(M& m) {
  if constexpr (requires { m.bump_revision(); }) {
    m.bump_revision();
  } else if constexpr (requires { m.revision; }) {
    ++m.revision;
  }
}

template <ParameterSet M>
std::vector<std::pair<std::string, std::span<double>>> collect_params(M& m) {
  std::vector<std::pair<std::string, std::span<double>>> out;
  m.visit("", [&](const std::string& name, std::span<double> s) { out.emplace_back(name, s); });
  return out;
}

template <ParameterSet M>
std::vector<std::pair<std::string, std::span<const double>>> collect_params(const M& m) {
  std::vector<std::pair<std::string, std::span<const double>>> out;
  m.visit("", [&](const std::string& name, std::span<const double> s) { out.emplace_back(name, s); });
  return out;
}

template <ParameterSet M>
void zero_fill(M& m) {
  m.visit("", [](const std::string&, std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
}

template <ParameterSet M>
std::size_t parameter_count(const M& m) {
  std::size_t n = 0;
  m.visit("", [&](const std::string&, std::span<const double> s) { n += s.size(); });
  return n;
}

struct OptimState {
  double learning_rate = 1e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<Vector> first_moment;
  std::vector<Vector> second_moment;
  std::size_t step_count = 0;

  void validate() const {
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
      throw ValidationError("AdamW betas must lie in (0, 1)");
    if (!(epsilon > 0.0)) throw ValidationError("AdamW epsilon must be positive");
    if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0))
      throw ValidationError("AdamW learning rate and weight decay must be non-negative");
  }

  friend bool operator==(const OptimState&, const OptimState&) = default;
};

/// One AdamW update. Decoupled decay multiplies each weight by (1 - lr*wd)
/// before the bias-corrected adaptive step is subtracted.
template <ParameterSet M>
void adamw_step(M& params, const M& grads, OptimState& state) {
  state.validate();
  auto p = collect_params(params);
  auto g = collect_params(grads);
  if (p.size() != g.size()) throw ShapeError("adamw_step: parameter and gradient tensor counts differ");
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (p[k].second.size() != g[k].second.size()) throw ShapeError("adamw_step: shape mismatch at " + p[k].first);
    for (double v : g[k].second)
      if (!std::isfinite(v)) throw TrainingError("non-finite gradient in parameter " + p[k].first);
  }
  if (state.first_moment.empty()) {
    for (const auto& [name, span] : p) {
      state.first_moment.emplace_back(span.size(), 0.0);
      state.second_moment.emplace_back(span.size(), 0.0);
    }
  }
  if (state.first_moment.size() != p.size() || state.second_moment.size() != p.size())
    throw ShapeError("adamw_step: optimiser state does not match parameter set");

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const double decay = 1.0 - state.learning_rate * state.weight_decay;
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto w = p[k].second;
    auto gr = g[k].second;
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != w.size() || v.size() != w.size()) throw ShapeError("adamw_step: moment buffer mismatch at " + p[k].first);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gr[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gr[i] * gr[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] *= decay;
      w[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
  bump_revision(params);
}

}  // namespace oculus::nn
