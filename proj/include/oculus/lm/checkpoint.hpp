// SPDX-License-Identifier: Apache-2.0
//
// Stage III checkpoint: projectors, decoder, vocabulary, both optimiser
// states, the loss curve, and references (path + sha256) to the frozen
// encoder checkpoints it was trained against.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "oculus/core/csv.hpp"
#include "oculus/lm/sft.hpp"
#include "oculus/nn/checkpoint.hpp"

namespace oculus::lm {

using nn::json;

struct ArtifactRef {
  std::string path;
  std::string sha256;

  friend bool operator==(const ArtifactRef&, const ArtifactRef&) = default;
};

inline ArtifactRef reference_to(const std::filesystem::path& path) {
  return {path.string(), io::sha256_file(path)};
}

struct Stage3Checkpoint {
  SftResult result;
  std::vector<std::string> vocabulary;
  ArtifactRef oct_encoder;
  ArtifactRef cfp_encoder;
};

inline json decoder_config_to_json(const DecoderConfig& c) {
  return {{"vocab", c.vocab}, {"d_model", c.d_model}, {"heads", c.heads},
          {"blocks", c.blocks}, {"ffn", c.ffn},       {"context", c.context}};
}

inline DecoderConfig decoder_config_from_json(const json& j) {
  DecoderConfig c;
  c.vocab = j.at("vocab").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.blocks = j.at("blocks").get<std::size_t>();
  c.ffn = j.at("ffn").get<std::size_t>();
  c.context = j.at("context").get<std::size_t>();
  c.validate();
  return c;
}

inline json sft_config_to_json(const SftConfig& c) {
  return {{"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"freeze_encoders", c.freeze_encoders},
          {"train_projectors", c.train_projectors},
          {"train_decoder", c.train_decoder},
          {"zero_cfp_token", c.zero_cfp_token}};
}

inline SftConfig sft_config_from_json(const json& j) {
  SftConfig c;
  c.epochs = j.at("epochs").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.freeze_encoders = j.at("freeze_encoders").get<bool>();
  c.train_projectors = j.at("train_projectors").get<bool>();
  c.train_decoder = j.at("train_decoder").get<bool>();
  c.zero_cfp_token = j.at("zero_cfp_token").get<bool>();
  c.validate();
  return c;
}

inline json save_stage3(const Stage3Checkpoint& c) {
  const auto& m = c.result.model;
  const json arch{{"oct_projector", nn::mlp_architecture(m.projectors.oct_projector)},
                  {"text_mapper", nn::mlp_architecture(m.projectors.text_mapper)},
                  {"decoder", decoder_config_to_json(m.decoder.config)}};
  json j = nn::make_checkpoint("sft", arch, m, c.result.projector_optim, c.result.seed);
  j["decoder_optimizer"] = nn::optim_to_json(c.result.decoder_optim);
  j["sft_config"] = sft_config_to_json(c.result.config);
  j["vocabulary"] = c.vocabulary;
  j["encoders"] = {{"oct", {{"path", c.oct_encoder.path}, {"sha256", c.oct_encoder.sha256}}},
                   {"cfp", {{"path", c.cfp_encoder.path}, {"sha256", c.cfp_encoder.sha256}}}};
  json curve = json::array();
  for (const auto& e : c.result.curve)
    curve.push_back({{"epoch", e.epoch}, {"mean_token_nll", e.mean_token_nll}, {"mean_sequence_nll", e.mean_sequence_nll}});
  j["loss_curve"] = curve;
  return j;
}

inline Stage3Checkpoint load_stage3(const json& j) {
  nn::check_envelope(j, "sft");
  Stage3Checkpoint c;
  try {
    const auto& arch = j.at("architecture");
    auto& m = c.result.model;
    m.projectors.oct_projector = nn::mlp_from_architecture(arch.at("oct_projector"));
    m.projectors.text_mapper = nn::mlp_from_architecture(arch.at("text_mapper"));
    m.projectors.validate();
    Rng unused(0);
    m.decoder = DecoderParams::create(decoder_config_from_json(arch.at("decoder")), unused);
    nn::weights_from_json(m, j);
    m.decoder.validate();
    c.result.projector_optim = nn::optim_from_json(j.at("optimizer"));
    c.result.decoder_optim = nn::optim_from_json(j.at("decoder_optimizer"));
    c.result.config = sft_config_from_json(j.at("sft_config"));
    c.result.seed = j.at("rng_seed").get<std::uint64_t>();
    c.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    c.oct_encoder = {j.at("encoders").at("oct").at("path").get<std::string>(),
                     j.at("encoders").at("oct").at("sha256").get<std::string>()};
    c.cfp_encoder = {j.at("encoders").at("cfp").at("path").get<std::string>(),
                     j.at("encoders").at("cfp").at("sha256").get<std::string>()};
    for (const auto& e : j.at("loss_curve"))
      c.result.curve.push_back({e.at("epoch").get<std::size_t>(), e.at("mean_token_nll").get<double>(),
                                e.at("mean_sequence_nll").get<double>()});
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed instruction-tuning checkpoint: ") + e.what());
  }
  if (c.vocabulary.size() != c.result.model.decoder.config.vocab)
    throw ShapeError("checkpoint vocabulary has " + std::to_string(c.vocabulary.size()) + " symbols, decoder expects " +
                     std::to_string(c.result.model.decoder.config.vocab));
  return c;
}

/// The stored vocabulary must match the tokenizer in use symbol for symbol.
inline void check_vocabulary(const Stage3Checkpoint& c, const report::Tokenizer& tok) {
  if (c.vocabulary != tok.symbols()) throw ValidationError("checkpoint vocabulary differs from the report tokenizer");
}

/// Confirms the referenced encoder file still has the recorded content.
inline void verify_reference(const ArtifactRef& ref) {
  if (!std::filesystem::exists(ref.path)) throw MissingArtifactError("encoder checkpoint " + ref.path + " is missing");
  if (io::sha256_file(ref.path) != ref.sha256)
    throw ValidationError("encoder checkpoint " + ref.path + " changed since instruction tuning");
}

inline std::string sft_curve_csv(const std::vector<SftEpoch>& curve) {
  std::string out = "epoch,mean_token_nll,mean_sequence_nll\n";
  for (const auto& e : curve)
    out += std::to_string(e.epoch) + ',' + format_double(e.mean_token_nll) + ',' + format_double(e.mean_sequence_nll) + '\n';
  return out;
}

}  // namespace oculus::lm
