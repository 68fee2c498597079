// SPDX-License-Identifier: Apache-2.0
//
// Instruction fine-tuning of the projectors and decoder on top of frozen
// image encoders, plus teacher-forced metrics and greedy report generation.
#pragma once

#include <functional>
#include <numeric>
#include <unordered_map>
#include <optional>
#include <string>
#include <vector>

#include "oculus/align/checkpoint.hpp"
#include "oculus/fusion/fusion.hpp"
#include "oculus/lm/decoder.hpp"
#include "oculus/report/instruction.hpp"

namespace oculus::lm {

using align::Embedding;
using align::ImageEncoder;

struct SftConfig {
  std::size_t epochs = 2;
  double learning_rate = 1e-3;
  double weight_decay = 1e-2;
  std::size_t batch_size = 8;
  bool freeze_encoders = true;
  bool train_projectors = true;
  bool train_decoder = true;
  /// Zero the CFP visual token everywhere (OCT-only variant).
  bool zero_cfp_token = false;

  void validate() const {
    if (!freeze_encoders) throw ConfigError("image encoders are always frozen during instruction tuning");
    if (batch_size == 0) throw ConfigError("sft batch_size must be positive");
    if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0))
      throw ConfigError("sft learning rate and weight decay must be non-negative");
  }

  friend bool operator==(const SftConfig&, const SftConfig&) = default;
};

/// Trainable Stage III parameters.
struct Stage3Model {
  fusion::ProjectorParams projectors;
  DecoderParams decoder;

  static Stage3Model create(std::size_t oct_dim, std::size_t cfp_dim, const DecoderConfig& dcfg, Rng& rng) {
    Stage3Model m;
    m.projectors = fusion::ProjectorParams::create(oct_dim, cfp_dim, dcfg.d_model, rng);
    m.decoder = DecoderParams::create(dcfg, rng);
    return m;
  }

  template <class F>
  void visit(std::string_view prefix, F&& f) {
    projectors.visit(std::string(prefix) + "projectors.", f);
    decoder.visit(std::string(prefix) + "decoder.", f);
  }
  template <class F>
  void visit(std::string_view prefix, F&& f) const {
    projectors.visit(std::string(prefix) + "projectors.", f);
    decoder.visit(std::string(prefix) + "decoder.", f);
  }
  void bump_revision() {
    projectors.bump_revision();
    decoder.bump_revision();
  }
  Stage3Model zeros_like() const { return {projectors.zeros_like(), decoder.zeros_like()}; }

  friend bool operator==(const Stage3Model&, const Stage3Model&) = default;
};

/// One training or evaluation sample with its frozen image embeddings.
struct SftExample {
  std::uint64_t eid = 0;
  Embedding z_oct;
  Embedding z_cfp;
  TokenSeq prompt;
  TokenSeq targets;  // report tokens followed by <eos>
};

inline TokenSeq to_token_seq(const std::vector<int>& ids) { return TokenSeq(ids.begin(), ids.end()); }

inline std::vector<int> to_int_ids(const TokenSeq& ids) {
  std::vector<int> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(static_cast<int>(id));
  return out;
}

/// Joins instruction pairs to cohort samples by eid and runs the frozen
/// encoders once.
inline std::vector<SftExample> prepare_examples(const std::vector<report::InstructionPair>& pairs, const Cohort& cohort,
                                                const ImageEncoder& oct_encoder, const ImageEncoder& cfp_encoder,
                                                const report::Tokenizer& tok) {
  std::unordered_map<std::uint64_t, const CohortSample*> by_eid;
  for (const auto& s : cohort) by_eid.emplace(s.eid, &s);
  std::vector<SftExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    const auto it = by_eid.find(p.eid);
    if (it == by_eid.end()) throw ValidationError("instruction pair eid " + std::to_string(p.eid) + " is not in the cohort");
    SftExample ex;
    ex.eid = p.eid;
    ex.z_oct = align::encode_oct(oct_encoder, it->second->oct);
    ex.z_cfp = align::encode_scan(cfp_encoder, it->second->cfp);
    if (ex.z_cfp.role != align::EmbeddingRole::z_cfp) throw ContractError("CFP encoder slot holds an OCT encoder");
    ex.prompt = to_token_seq(tok.tokenize(p.prompt_text));
    ex.targets = to_token_seq(tok.tokenize(p.report_text));
    ex.targets.push_back(static_cast<std::size_t>(report::Tokenizer::kEos));
    out.push_back(std::move(ex));
  }
  return out;
}

/// Whether teacher forcing `ex` stays inside a decoder context of `context`
/// positions (two visual tokens, the prompt, then all targets but the last).
inline bool fits_context(const SftExample& ex, std::size_t context) {
  return 2 + ex.prompt.size() + ex.targets.size() - 1 <= context;
}

/// Examples that fit, in their original order.
inline std::vector<SftExample> within_context(const std::vector<SftExample>& examples, std::size_t context) {
  std::vector<SftExample> out;
  for (const auto& ex : examples)
    if (fits_context(ex, context)) out.push_back(ex);
  return out;
}

struct PrefixTape {
  fusion::VisualTape visual;
};

/// Decoder prefix [h_cfp, h_oct, Embed(prompt)] for one example.
inline fusion::FusedSequence build_prefix(const Stage3Model& m, const SftExample& ex, bool zero_cfp = false,
                                          PrefixTape* tape = nullptr) {
  auto vt = fusion::visual_tokens(m.projectors, ex.z_oct, ex.z_cfp, tape ? &tape->visual : nullptr);
  if (zero_cfp) vt.h_cfp = Embedding(align::EmbeddingRole::h_cfp, Vector(vt.h_cfp.dim(), 0.0));
  return fusion::fuse_sequence(vt.h_cfp, vt.h_oct, embed_tokens(m.decoder, ex.prompt));
}

/// Summed token NLL for one example; accumulates gradients when `grads` is set.
inline double example_nll(const Stage3Model& m, const SftExample& ex, bool zero_cfp, Stage3Model* grads) {
  if (grads == nullptr) {
    const auto prefix = build_prefix(m, ex, zero_cfp);
    return nll_loss(decoder_forward(m.decoder, prefix, ex.targets).log_probs, ex.targets);
  }
  PrefixTape ptape;
  const auto prefix = build_prefix(m, ex, zero_cfp, &ptape);
  DecoderTape dtape;
  const auto out = decoder_forward(m.decoder, prefix, ex.targets, &dtape);
  const double loss = nll_loss(out.log_probs, ex.targets);
  const DenseMatrix dprefix = nll_backward(m.decoder, dtape, ex.targets, grads->decoder);
  for (std::size_t i = 0; i < ex.prompt.size(); ++i) {
    const auto g = dprefix.row(2 + i);
    auto ge = grads->decoder.token_embedding.row(ex.prompt[i]);
    for (std::size_t c = 0; c < g.size(); ++c) ge[c] += g[c];
  }
  Vector d_cfp(dprefix.cols, 0.0);
  if (!zero_cfp) d_cfp.assign(dprefix.row(0).begin(), dprefix.row(0).end());
  fusion::visual_backward(m.projectors, ptape.visual, d_cfp, dprefix.row(1), grads->projectors);
  return loss;
}

struct SftEpoch {
  std::size_t epoch = 0;
  double mean_token_nll = 0.0;
  double mean_sequence_nll = 0.0;

  friend bool operator==(const SftEpoch&, const SftEpoch&) = default;
};

struct SftResult {
  Stage3Model model;
  SftConfig config;
  nn::OptimState projector_optim;
  nn::OptimState decoder_optim;
  std::vector<SftEpoch> curve;
  std::uint64_t seed = 0;
};

/// Content hash of an encoder's parameters and preprocessing constants.
inline std::string encoder_hash(const ImageEncoder& e) {
  return io::sha256_hex(nn::weights_to_json(e).dump() + align::image_encoder_architecture(e).dump());
}

namespace sft_detail {
enum Stream : std::uint64_t { init = 21, order = 22 };
}

inline Stage3Model init_stage3(std::size_t oct_dim, std::size_t cfp_dim, std::size_t vocab, std::uint64_t seed) {
  Rng rng(derive_seed(seed, sft_detail::init));
  DecoderConfig dcfg;
  dcfg.vocab = vocab;
  return Stage3Model::create(oct_dim, cfp_dim, dcfg, rng);
}

using SftCallback = std::function<void(const SftEpoch&)>;

/// Fine-tunes `init` on `train`. The encoders are only read, and their
/// hashes are compared before and after as a freeze check.
inline SftResult train_sft(const std::vector<SftExample>& train, const ImageEncoder& oct_encoder,
                           const ImageEncoder& cfp_encoder, Stage3Model init, const SftConfig& cfg, std::uint64_t seed,
                           const SftCallback& on_epoch = {}) {
  cfg.validate();
  if (train.empty()) throw ValidationError("instruction tuning needs at least one example");
  const std::string oct_before = encoder_hash(oct_encoder);
  const std::string cfp_before = encoder_hash(cfp_encoder);

  SftResult r;
  r.model = std::move(init);
  r.config = cfg;
  r.seed = seed;
  for (auto* o : {&r.projector_optim, &r.decoder_optim}) {
    o->learning_rate = cfg.learning_rate;
    o->weight_decay = cfg.weight_decay;
  }
  auto grads = r.model.zeros_like();
  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, sft_detail::order, epoch));
    rng.shuffle(order);
    double total = 0.0;
    std::size_t tokens = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      nn::zero_fill(grads);
      for (std::size_t k = start; k < end; ++k) {
        const auto& ex = train[order[k]];
        double loss = 0.0;
        try {
          loss = example_nll(r.model, ex, cfg.zero_cfp_token, &grads);
        } catch (const TrainingError& e) {
          throw TrainingError("instruction tuning diverged at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(start / cfg.batch_size + 1) + ": " + e.what());
        }
        total += loss;
        tokens += ex.targets.size();
      }
      try {
        if (cfg.train_projectors) nn::adamw_step(r.model.projectors, grads.projectors, r.projector_optim);
        if (cfg.train_decoder) nn::adamw_step(r.model.decoder, grads.decoder, r.decoder_optim);
      } catch (const TrainingError& e) {
        throw TrainingError("instruction tuning diverged at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(start / cfg.batch_size + 1) + ": " + e.what());
      }
    }
    SftEpoch e{epoch, total / static_cast<double>(tokens), total / static_cast<double>(train.size())};
    r.curve.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  if (encoder_hash(oct_encoder) != oct_before || encoder_hash(cfp_encoder) != cfp_before)
    throw ContractError("frozen encoder parameters changed during instruction tuning");
  return r;
}

/// Whether a token belongs to the report's fixed structure (keywords,
/// separators, biomarker names, units) rather than sample-specific content
/// (digits, decimal points, flags, template ids, labels, <eos>).
class TokenClasses {
 public:
  explicit TokenClasses(const report::Tokenizer& tok) : structural_(tok.vocab_size(), false) {
    auto mark = [&](std::string_view s) {
      for (std::size_t id = 0; id < tok.vocab_size(); ++id)
        if (tok.symbol(static_cast<int>(id)) == s) structural_[id] = true;
    };
    for (std::string_view s : {"FINDING", "INFER", "NOTE", "DIAGNOSIS", " ", "\n", ","}) mark(s);
    for (const auto& spec : biomarker_schema()) {
      mark(spec.name);
      mark(spec.unit);
    }
  }
  bool structural(std::size_t id) const { return id < structural_.size() && structural_[id]; }

 private:
  std::vector<bool> structural_;
};

struct TokenAccuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  std::size_t structural_correct = 0;
  std::size_t structural_total = 0;
  double nll_sum = 0.0;

  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
  double structural_accuracy() const {
    return structural_total ? static_cast<double>(structural_correct) / static_cast<double>(structural_total) : 0.0;
  }
  double mean_token_nll() const { return total ? nll_sum / static_cast<double>(total) : 0.0; }
};

/// Teacher-forced argmax accuracy and NLL over `examples`.
inline TokenAccuracy teacher_forced_metrics(const Stage3Model& m, const std::vector<SftExample>& examples,
                                            const TokenClasses& classes, bool zero_cfp = false) {
  TokenAccuracy acc;
  for (const auto& ex : examples) {
    const auto out = decoder_forward(m.decoder, build_prefix(m, ex, zero_cfp), ex.targets);
    acc.nll_sum += nll_loss(out.log_probs, ex.targets);
    for (std::size_t t = 0; t < ex.targets.size(); ++t) {
      const auto row = out.log_probs.row(t);
      const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      const bool ok = pred == ex.targets[t];
      acc.correct += ok;
      ++acc.total;
      if (classes.structural(ex.targets[t])) {
        acc.structural_correct += ok;
        ++acc.structural_total;
      }
    }
  }
  return acc;
}

/// Greedy report text for one example (stops at <eos>).
inline std::string generate_report_text(const Stage3Model& m, const SftExample& ex, const report::Tokenizer& tok,
                                        bool zero_cfp = false, std::size_t max_len = 0) {
  const auto prefix = build_prefix(m, ex, zero_cfp);
  const std::size_t cap = max_len ? max_len : m.decoder.config.context;
  return tok.detokenize(to_int_ids(generate_tokens(m.decoder, prefix, cap, report::Tokenizer::kEos)));
}

}  // namespace oculus::lm
