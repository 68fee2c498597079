// SPDX-License-Identifier: Apache-2.0
//
// Versioned JSON checkpoints. Doubles are written in shortest round-trip
// form, so load(save(p)) reproduces every parameter bit for bit.
#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>

#include "oculus/core/io.hpp"
#include "oculus/nn/adamw.hpp"
#include "oculus/nn/conv.hpp"

namespace oculus::nn {

using json = nlohmann::json;

inline constexpr int kCheckpointFormatVersion = 1;

template <ParameterSet M>
json weights_to_json(const M& m) {
  json shapes = json::object();
  json weights = json::object();
  m.visit("", [&](const std::string& name, std::span<const double> s) {
    shapes[name] = json::array({s.size()});
    weights[name] = json(std::vector<double>(s.begin(), s.end()));
  });
  return json{{"shapes", shapes}, {"weights", weights}};
}

/// `m` must already have the target architecture.
template <ParameterSet M>
void weights_from_json(M& m, const json& j) {
  const auto& weights = j.at("weights");
  std::size_t seen = 0;
  m.visit("", [&](const std::string& name, std::span<double> s) {
    if (!weights.contains(name)) throw ValidationError("checkpoint is missing tensor " + name);
    const auto& arr = weights.at(name);
    if (!arr.is_array() || arr.size() != s.size())
      throw ShapeError("checkpoint tensor " + name + " has " + std::to_string(arr.size()) + " values, expected " +
                       std::to_string(s.size()));
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = arr[i].get<double>();
    ++seen;
  });
  if (seen != weights.size()) throw ValidationError("checkpoint has tensors the model does not declare");
  bump_revision(m);
}

inline json optim_to_json(const OptimState& s) {
  return json{{"learning_rate", s.learning_rate}, {"weight_decay", s.weight_decay},
              {"beta1", s.beta1},                 {"beta2", s.beta2},
              {"epsilon", s.epsilon},             {"step_count", s.step_count},
              {"first_moment", s.first_moment},   {"second_moment", s.second_moment}};
}

inline OptimState optim_from_json(const json& j) {
  OptimState s;
  s.learning_rate = j.at("learning_rate").get<double>();
  s.weight_decay = j.at("weight_decay").get<double>();
  s.beta1 = j.at("beta1").get<double>();
  s.beta2 = j.at("beta2").get<double>();
  s.epsilon = j.at("epsilon").get<double>();
  s.step_count = j.at("step_count").get<std::size_t>();
  s.first_moment = j.at("first_moment").get<std::vector<Vector>>();
  s.second_moment = j.at("second_moment").get<std::vector<Vector>>();
  s.validate();
  return s;
}

inline json mlp_architecture(const MlpParams& p) {
  json layers = json::array();
  for (const auto& l : p.layers)
    layers.push_back({{"in", l.in_dim()}, {"out", l.out_dim()}, {"activation", std::string(to_string(l.activation))}});
  return layers;
}

inline MlpParams mlp_from_architecture(const json& layers) {
  MlpParams p;
  for (const auto& l : layers) {
    DenseLayer layer;
    layer.weight = DenseMatrix(l.at("in").get<std::size_t>(), l.at("out").get<std::size_t>());
    layer.bias.assign(layer.weight.cols, 0.0);
    layer.activation = activation_from_string(l.at("activation").get<std::string>());
    p.layers.push_back(std::move(layer));
  }
  p.validate();
  return p;
}

inline json conv_architecture(const Conv2dParams& c) {
  return json{{"in_channels", c.in_channels}, {"out_channels", c.out_channels}, {"kernel", c.kernel},
              {"stride", c.stride},           {"activation", std::string(to_string(c.activation))}};
}

inline Conv2dParams conv_from_architecture(const json& j) {
  Conv2dParams c;
  c.in_channels = j.at("in_channels").get<std::size_t>();
  c.out_channels = j.at("out_channels").get<std::size_t>();
  c.kernel = j.at("kernel").get<std::size_t>();
  c.stride = j.at("stride").get<std::size_t>();
  c.activation = activation_from_string(j.at("activation").get<std::string>());
  c.weight = DenseMatrix(c.kernel * c.kernel * c.in_channels, c.out_channels);
  c.bias.assign(c.out_channels, 0.0);
  return c;
}

/// Envelope shared by every checkpoint the project writes.
template <ParameterSet M>
json make_checkpoint(std::string_view module, const json& architecture, const M& model,
                     const std::optional<OptimState>& optim, std::uint64_t rng_seed) {
  json j = weights_to_json(model);
  j["format_version"] = kCheckpointFormatVersion;
  j["module"] = std::string(module);
  j["architecture"] = architecture;
  j["optimizer"] = optim ? optim_to_json(*optim) : json(nullptr);
  j["rng_seed"] = rng_seed;
  return j;
}

inline void check_envelope(const json& j, std::string_view module) {
  if (!j.is_object() || !j.contains("format_version")) throw ValidationError("not a checkpoint document");
  if (j.at("format_version").get<int>() != kCheckpointFormatVersion)
    throw ValidationError("unsupported checkpoint format_version " + j.at("format_version").dump());
  if (j.at("module").get<std::string>() != module)
    throw ValidationError("checkpoint module is '" + j.at("module").get<std::string>() + "', expected '" +
                          std::string(module) + "'");
}

/// Standalone MLP checkpoint.
inline json save_mlp(const MlpParams& p, const std::optional<OptimState>& optim, std::uint64_t seed) {
  return make_checkpoint("mlp", mlp_architecture(p), p, optim, seed);
}

struct LoadedMlp {
  MlpParams params;
  std::optional<OptimState> optim;
  std::uint64_t rng_seed = 0;
};

inline LoadedMlp load_mlp(const json& j) {
  check_envelope(j, "mlp");
  LoadedMlp out;
  out.params = mlp_from_architecture(j.at("architecture"));
  weights_from_json(out.params, j);
  if (!j.at("optimizer").is_null()) out.optim = optim_from_json(j.at("optimizer"));
  out.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  return out;
}

inline void write_json_atomic(const std::filesystem::path& path, const json& j) {
  io::write_file_atomic(path, j.dump() + "\n");
}

inline json read_json(const std::filesystem::path& path) {
  const std::string text = io::read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace oculus::nn
