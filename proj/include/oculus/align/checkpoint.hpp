// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "oculus/align/train.hpp"
#include "oculus/core/csv.hpp"
#include "oculus/nn/checkpoint.hpp"

namespace oculus::align {

using nn::json;

inline json standardizer_to_json(const Standardizer& s) {
  return {{"indices", s.indices}, {"mean", s.mean}, {"sd", s.sd}};
}

inline Standardizer standardizer_from_json(const json& j) {
  Standardizer s;
  s.indices = j.at("indices").get<std::vector<std::size_t>>();
  s.mean = j.at("mean").get<Vector>();
  s.sd = j.at("sd").get<Vector>();
  s.validate();
  return s;
}

inline json align_config_to_json(const AlignConfig& c) {
  return {{"temperature", c.temperature},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"embed_dim", c.embed_dim},
          {"include_positive_in_denominator", c.include_positive_in_denominator}};
}

inline AlignConfig align_config_from_json(const json& j) {
  AlignConfig c;
  c.temperature = j.at("temperature").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.include_positive_in_denominator = j.at("include_positive_in_denominator").get<bool>();
  c.validate();
  return c;
}

inline json image_encoder_architecture(const ImageEncoder& e) {
  return {{"modality", std::string(to_string(e.modality))},
          {"pixel_mean", e.pixel_mean},
          {"pixel_scale", e.pixel_scale},
          {"conv1", nn::conv_architecture(e.conv1)},
          {"conv2", nn::conv_architecture(e.conv2)},
          {"head", nn::mlp_architecture(e.head)}};
}

inline ImageEncoder image_encoder_from_architecture(const json& j) {
  ImageEncoder e;
  e.modality = modality_from_string(j.at("modality").get<std::string>());
  e.pixel_mean = j.at("pixel_mean").get<double>();
  e.pixel_scale = j.at("pixel_scale").get<double>();
  e.conv1 = nn::conv_from_architecture(j.at("conv1"));
  e.conv2 = nn::conv_from_architecture(j.at("conv2"));
  e.head = nn::mlp_from_architecture(j.at("head"));
  if (!(e.pixel_scale > 0.0)) throw ValidationError("image encoder pixel_scale must be positive");
  return e;
}

/// Alignment checkpoint: both encoders, optimiser state, standardization
/// statistics, configuration and the per-epoch loss curve.
inline json save_alignment(const AlignResult& r) {
  const json arch{{"image", image_encoder_architecture(r.model.image)},
                  {"tab", nn::mlp_architecture(r.model.tab.mlp)}};
  json j = nn::make_checkpoint("align", arch, r.model, r.optim, r.seed);
  j["standardization_stats"] = standardizer_to_json(r.model.tab.stats);
  j["align_config"] = align_config_to_json(r.config);
  json curve = json::array();
  for (const auto& e : r.curve) curve.push_back({{"epoch", e.epoch}, {"i2t", e.i2t}, {"t2i", e.t2i}, {"total", e.total}});
  j["loss_curve"] = curve;
  return j;
}

inline AlignResult load_alignment(const json& j) {
  nn::check_envelope(j, "align");
  AlignResult r;
  try {
    r.model.image = image_encoder_from_architecture(j.at("architecture").at("image"));
    r.model.tab.mlp = nn::mlp_from_architecture(j.at("architecture").at("tab"));
    r.model.tab.stats = standardizer_from_json(j.at("standardization_stats"));
    nn::weights_from_json(r.model, j);
    if (!j.at("optimizer").is_null()) r.optim = nn::optim_from_json(j.at("optimizer"));
    r.config = align_config_from_json(j.at("align_config"));
    r.seed = j.at("rng_seed").get<std::uint64_t>();
    for (const auto& e : j.at("loss_curve"))
      r.curve.push_back({e.at("epoch").get<std::size_t>(), e.at("i2t").get<double>(), e.at("t2i").get<double>(),
                         e.at("total").get<double>()});
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed alignment checkpoint: ") + e.what());
  }
  if (r.model.tab.mlp.in_dim() != r.model.tab.stats.indices.size())
    throw ShapeError("tabular encoder input dim does not match its standardization statistics");
  return r;
}

inline std::string loss_curve_csv(const std::vector<EpochLoss>& curve) {
  std::string out = "epoch,loss_i2t,loss_t2i,total\n";
  for (const auto& e : curve)
    out += std::to_string(e.epoch) + ',' + format_double(e.i2t) + ',' + format_double(e.t2i) + ',' +
           format_double(e.total) + '\n';
  return out;
}

}  // namespace oculus::align
