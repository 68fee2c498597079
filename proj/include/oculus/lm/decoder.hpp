// SPDX-License-Identifier: Apache-2.0
//
// Small causal transformer decoder over the report vocabulary. Pre-RMSNorm
// blocks (multi-head self-attention, tanh feed-forward), learned positions,
// and a linear output head. The sequence is the fused prefix followed by the
// target tokens shifted right by one; every forward and backward pass here
// is written out by hand.
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "oculus/fusion/fusion.hpp"
#include "oculus/nn/adamw.hpp"
#include "oculus/nn/matrix.hpp"

namespace oculus::lm {

using nn::DenseMatrix;
using nn::Vector;
using TokenSeq = std::vector<std::size_t>;

inline constexpr double kRmsEpsilon = 1e-6;

struct DecoderConfig {
  std::size_t vocab = 0;
  std::size_t d_model = 64;
  std::size_t heads = 2;
  std::size_t blocks = 2;
  std::size_t ffn = 128;
  std::size_t context = 256;

  void validate() const {
    if (vocab < 2) throw ValidationError("decoder vocabulary must have at least 2 symbols");
    if (d_model == 0 || heads == 0 || d_model % heads != 0)
      throw ValidationError("decoder d_model must be a positive multiple of the head count");
    if (blocks == 0 || ffn == 0 || context < 2) throw ValidationError("decoder blocks, ffn and context must be positive");
  }
  std::size_t head_dim() const { return d_model / heads; }

  friend bool operator==(const DecoderConfig&, const DecoderConfig&) = default;
};

struct DecoderBlock {
  Vector norm1;
  DenseMatrix wq, wk, wv, wo;  // d x d
  Vector norm2;
  DenseMatrix w1;  // d x ffn
  Vector b1;
  DenseMatrix w2;  // ffn x d
  Vector b2;

  template <class Self, class F>
  static void visit_impl(Self& b, const std::string& p, F&& f) {
    using Span = std::conditional_t<std::is_const_v<Self>, std::span<const double>, std::span<double>>;
    f(p + "norm1", Span(b.norm1));
    f(p + "wq", Span(b.wq.data));
    f(p + "wk", Span(b.wk.data));
    f(p + "wv", Span(b.wv.data));
    f(p + "wo", Span(b.wo.data));
    f(p + "norm2", Span(b.norm2));
    f(p + "w1", Span(b.w1.data));
    f(p + "b1", Span(b.b1));
    f(p + "w2", Span(b.w2.data));
    f(p + "b2", Span(b.b2));
  }

  friend bool operator==(const DecoderBlock&, const DecoderBlock&) = default;
};

struct DecoderParams {
  DecoderConfig config;
  DenseMatrix token_embedding;  // vocab x d
  DenseMatrix positions;        // context x d
  std::vector<DecoderBlock> blocks;
  Vector final_norm;
  DenseMatrix head;  // d x vocab
  Vector head_bias;
  std::uint64_t revision = 0;

  static DecoderParams create(const DecoderConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t d = cfg.d_model;
    DecoderParams p;
    p.config = cfg;
    p.token_embedding = DenseMatrix(cfg.vocab, d);
    for (double& v : p.token_embedding.data) v = rng.normal(0.0, 0.5);
    p.positions = DenseMatrix(cfg.context, d);
    for (double& v : p.positions.data) v = rng.normal(0.0, 0.1);
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
      DecoderBlock blk;
      blk.norm1.assign(d, 1.0);
      blk.norm2.assign(d, 1.0);
      for (auto* m : {&blk.wq, &blk.wk, &blk.wv, &blk.wo}) {
        *m = DenseMatrix(d, d);
        nn::glorot_uniform(m->data, d, d, rng);
      }
      blk.w1 = DenseMatrix(d, cfg.ffn);
      nn::glorot_uniform(blk.w1.data, d, cfg.ffn, rng);
      blk.b1.assign(cfg.ffn, 0.0);
      blk.w2 = DenseMatrix(cfg.ffn, d);
      nn::glorot_uniform(blk.w2.data, cfg.ffn, d, rng);
      blk.b2.assign(d, 0.0);
      p.blocks.push_back(std::move(blk));
    }
    p.final_norm.assign(d, 1.0);
    p.head = DenseMatrix(d, cfg.vocab);
    nn::glorot_uniform(p.head.data, d, cfg.vocab, rng);
    p.head_bias.assign(cfg.vocab, 0.0);
    return p;
  }

  template <class F>
  void visit(std::string_view prefix, F&& f) {
    visit_impl(*this, std::string(prefix), f);
  }
  template <class F>
  void visit(std::string_view prefix, F&& f) const {
    visit_impl(*this, std::string(prefix), f);
  }
  void bump_revision() { ++revision; }

  DecoderParams zeros_like() const {
    DecoderParams g = *this;
    g.revision = 0;
    g.visit("", [](const std::string&, std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
    return g;
  }

  /// Structural check, used after loading.
  void validate() const {
    config.validate();
    const std::size_t d = config.d_model;
    auto shape = [](const DenseMatrix& m, std::size_t r, std::size_t c, const char* what) {
      if (m.rows != r || m.cols != c || m.data.size() != r * c)
        throw ShapeError(std::string("decoder tensor ") + what + " has the wrong shape");
    };
    shape(token_embedding, config.vocab, d, "token_embedding");
    shape(positions, config.context, d, "positions");
    shape(head, d, config.vocab, "head");
    if (blocks.size() != config.blocks) throw ShapeError("decoder block count does not match its config");
    for (const auto& b : blocks) {
      shape(b.wq, d, d, "wq");
      shape(b.wk, d, d, "wk");
      shape(b.wv, d, d, "wv");
      shape(b.wo, d, d, "wo");
      shape(b.w1, d, config.ffn, "w1");
      shape(b.w2, config.ffn, d, "w2");
      if (b.norm1.size() != d || b.norm2.size() != d || b.b1.size() != config.ffn || b.b2.size() != d)
        throw ShapeError("decoder block vector has the wrong length");
    }
    if (final_norm.size() != d || head_bias.size() != config.vocab) throw ShapeError("decoder output tensors mis-sized");
  }

  friend bool operator==(const DecoderParams& a, const DecoderParams& b) {
    return a.config == b.config && a.token_embedding == b.token_embedding && a.positions == b.positions &&
           a.blocks == b.blocks && a.final_norm == b.final_norm && a.head == b.head && a.head_bias == b.head_bias;
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& p, const std::string& prefix, F&& f) {
    using Span = std::conditional_t<std::is_const_v<Self>, std::span<const double>, std::span<double>>;
    f(prefix + "token_embedding", Span(p.token_embedding.data));
    f(prefix + "positions", Span(p.positions.data));
    for (std::size_t b = 0; b < p.blocks.size(); ++b)
      DecoderBlock::visit_impl(p.blocks[b], prefix + "blocks." + std::to_string(b) + ".", f);
    f(prefix + "final_norm", Span(p.final_norm));
    f(prefix + "head", Span(p.head.data));
    f(prefix + "head_bias", Span(p.head_bias));
  }
};

namespace decoder_detail {

// y = x W (+ accumulate into y). W is (x.size() x y.size()).
inline void row_times(std::span<const double> x, const DenseMatrix& w, std::span<double> y) {
  for (std::size_t k = 0; k < w.rows; ++k) {
    const double xk = x[k];
    if (xk == 0.0) continue;
    const double* wr = w.data.data() + k * w.cols;
    for (std::size_t j = 0; j < w.cols; ++j) y[j] += xk * wr[j];
  }
}

// dx += dy W^T
inline void row_times_transpose(std::span<const double> dy, const DenseMatrix& w, std::span<double> dx) {
  for (std::size_t k = 0; k < w.rows; ++k) {
    const double* wr = w.data.data() + k * w.cols;
    double acc = 0.0;
    for (std::size_t j = 0; j < w.cols; ++j) acc += dy[j] * wr[j];
    dx[k] += acc;
  }
}

// dW += x^T dy
inline void outer_add(std::span<const double> x, std::span<const double> dy, DenseMatrix& dw) {
  for (std::size_t k = 0; k < dw.rows; ++k) {
    const double xk = x[k];
    if (xk == 0.0) continue;
    double* wr = dw.data.data() + k * dw.cols;
    for (std::size_t j = 0; j < dw.cols; ++j) wr[j] += xk * dy[j];
  }
}

/// Returns the RMS denominator r; writes gain * x / r.
inline double rms_norm(std::span<const double> x, std::span<const double> gain, std::span<double> y) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double r = std::sqrt(ss / static_cast<double>(x.size()) + kRmsEpsilon);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gain[i] * x[i] / r;
  return r;
}

inline void rms_norm_backward(std::span<const double> x, std::span<const double> gain, double r,
                              std::span<const double> dy, std::span<double> dx, std::span<double> dgain) {
  const double n = static_cast<double>(x.size());
  double dot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) dot += gain[i] * dy[i] * x[i];
  const double c = dot / (n * r * r * r);
  for (std::size_t i = 0; i < x.size(); ++i) {
    dx[i] += gain[i] * dy[i] / r - x[i] * c;
    dgain[i] += dy[i] * x[i] / r;
  }
}

inline void log_softmax_row(std::span<double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  for (double& v : z) v -= lse;
}

/// Causal attention of row i over keys/values 0..i for one head; writes the
/// normalized weights into `weights` (length i+1) and accumulates the head
/// output into `out`.
inline void attend_row(std::span<const double> q, const DenseMatrix& k, const DenseMatrix& v, std::size_t i,
                       std::size_t offset, std::size_t hd, std::span<double> weights, std::span<double> out) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  double mx = -INFINITY;
  for (std::size_t j = 0; j <= i; ++j) {
    const double* kr = k.data.data() + j * k.cols + offset;
    double s = 0.0;
    for (std::size_t c = 0; c < hd; ++c) s += q[offset + c] * kr[c];
    weights[j] = s * scale;
    mx = std::max(mx, weights[j]);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j <= i; ++j) {
    weights[j] = std::exp(weights[j] - mx);
    sum += weights[j];
  }
  for (std::size_t j = 0; j <= i; ++j) {
    weights[j] /= sum;
    const double* vr = v.data.data() + j * v.cols + offset;
    for (std::size_t c = 0; c < hd; ++c) out[offset + c] += weights[j] * vr[c];
  }
}

}  // namespace decoder_detail

struct BlockTape {
  DenseMatrix x_in, n1, q, k, v, attn_out, x_mid, n2, hidden;
  Vector r1, r2;
  std::vector<DenseMatrix> weights;  // per head, L x L (lower triangle used)
};

struct DecoderTape {
  const DecoderParams* params = nullptr;
  std::uint64_t revision = 0;
  std::size_t prefix_length = 0;
  TokenSeq inputs;  // fed tokens (targets shifted right)
  std::vector<BlockTape> blocks;
  DenseMatrix x_final, n_final;
  Vector r_final;
  DenseMatrix log_probs;
};

/// Per-position next-token log-probabilities. Row i predicts targets[i]
/// from the prefix and targets[0..i-1].
struct DecoderOutput {
  DenseMatrix log_probs;  // targets.size() x vocab
};

/// Full teacher-forced pass. The sequence length is prefix + targets - 1 and
/// must fit the context window.
inline DecoderOutput decoder_forward(const DecoderParams& p, const fusion::FusedSequence& prefix, const TokenSeq& targets,
                                     DecoderTape* tape = nullptr) {
  using namespace decoder_detail;
  const auto& cfg = p.config;
  const std::size_t d = cfg.d_model;
  const std::size_t plen = prefix.total_length();
  if (plen == 0) throw ContractError("decoder prefix is empty");
  if (targets.empty()) throw ContractError("decoder needs at least one target token");
  for (std::size_t t : targets)
    if (t >= cfg.vocab) throw ContractError("target id " + std::to_string(t) + " outside vocabulary of " + std::to_string(cfg.vocab));
  const std::size_t len = plen + targets.size() - 1;
  if (len > cfg.context)
    throw ContextError("sequence of " + std::to_string(len) + " positions exceeds the context window of " +
                       std::to_string(cfg.context));

  DenseMatrix x(len, d);
  for (std::size_t i = 0; i < len; ++i) {
    auto row = x.row(i);
    if (i < plen) {
      const auto& src = prefix.row(i);
      if (src.size() != d) throw ShapeError("prefix row " + std::to_string(i) + " has dim " + std::to_string(src.size()) + ", decoder expects " + std::to_string(d));
      std::copy(src.begin(), src.end(), row.begin());
    } else {
      const auto e = p.token_embedding.row(targets[i - plen]);
      std::copy(e.begin(), e.end(), row.begin());
    }
    const auto pos = p.positions.row(i);
    for (std::size_t c = 0; c < d; ++c) row[c] += pos[c];
  }

  const std::size_t hd = cfg.head_dim();
  if (tape) {
    tape->params = &p;
    tape->revision = p.revision;
    tape->prefix_length = plen;
    tape->inputs.assign(targets.begin(), targets.end() - 1);
    tape->blocks.assign(p.blocks.size(), {});
  }
  std::vector<double> scratch(len);
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const auto& blk = p.blocks[b];
    DenseMatrix n1(len, d), q(len, d), k(len, d), v(len, d), ao(len, d), n2(len, d), hid(len, cfg.ffn);
    Vector r1(len), r2(len);
    std::vector<DenseMatrix> weights;
    if (tape) weights.assign(cfg.heads, DenseMatrix(len, len));
    for (std::size_t i = 0; i < len; ++i) {
      r1[i] = rms_norm(x.row(i), blk.norm1, n1.row(i));
      row_times(n1.row(i), blk.wq, q.row(i));
      row_times(n1.row(i), blk.wk, k.row(i));
      row_times(n1.row(i), blk.wv, v.row(i));
    }
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t h = 0; h < cfg.heads; ++h) {
        std::span<double> w = tape ? weights[h].row(i) : std::span<double>(scratch);
        attend_row(q.row(i), k, v, i, h * hd, hd, w, ao.row(i));
      }
    DenseMatrix x_mid = x;
    for (std::size_t i = 0; i < len; ++i) row_times(ao.row(i), blk.wo, x_mid.row(i));
    DenseMatrix x_out = x_mid;
    for (std::size_t i = 0; i < len; ++i) {
      r2[i] = rms_norm(x_mid.row(i), blk.norm2, n2.row(i));
      auto hr = hid.row(i);
      std::copy(blk.b1.begin(), blk.b1.end(), hr.begin());
      row_times(n2.row(i), blk.w1, hr);
      for (double& e : hr) e = std::tanh(e);
      auto xo = x_out.row(i);
      for (std::size_t c = 0; c < d; ++c) xo[c] += blk.b2[c];
      row_times(hr, blk.w2, xo);
    }
    if (tape) {
      auto& bt = tape->blocks[b];
      bt.x_in = std::move(x);
      bt.n1 = std::move(n1);
      bt.q = std::move(q);
      bt.k = std::move(k);
      bt.v = std::move(v);
      bt.attn_out = std::move(ao);
      bt.x_mid = std::move(x_mid);
      bt.n2 = std::move(n2);
      bt.hidden = std::move(hid);
      bt.r1 = std::move(r1);
      bt.r2 = std::move(r2);
      bt.weights = std::move(weights);
    }
    x = std::move(x_out);
  }

  const std::size_t n_out = targets.size();
  DecoderOutput out{DenseMatrix(n_out, cfg.vocab)};
  DenseMatrix nf(n_out, d);
  Vector rf(n_out);
  for (std::size_t t = 0; t < n_out; ++t) {
    const std::size_t i = plen - 1 + t;
    rf[t] = rms_norm(x.row(i), p.final_norm, nf.row(t));
    auto lr = out.log_probs.row(t);
    std::copy(p.head_bias.begin(), p.head_bias.end(), lr.begin());
    row_times(nf.row(t), p.head, lr);
    log_softmax_row(lr);
  }
  if (tape) {
    tape->x_final = std::move(x);
    tape->n_final = std::move(nf);
    tape->r_final = std::move(rf);
    tape->log_probs = out.log_probs;
  }
  return out;
}

/// Sequence NLL: -sum_i log P(y_i | prefix, y_<i).
inline double nll_loss(const DenseMatrix& log_probs, const TokenSeq& targets) {
  if (log_probs.rows != targets.size()) throw ShapeError("nll_loss: log-prob rows and targets differ in length");
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] >= log_probs.cols)
      throw ContractError("target id " + std::to_string(targets[i]) + " outside vocabulary of " +
                          std::to_string(log_probs.cols));
    loss -= log_probs(i, targets[i]);
  }
  if (!std::isfinite(loss)) throw TrainingError("non-finite token NLL");
  return loss;
}

/// Backward pass of nll_loss through the decoder. Accumulates parameter
/// gradients into `grads` and returns dL/d(prefix rows), one row per prefix
/// position.
inline DenseMatrix nll_backward(const DecoderParams& p, const DecoderTape& tape, const TokenSeq& targets,
                                DecoderParams& grads) {
  using namespace decoder_detail;
  if (tape.params != &p || tape.revision != p.revision)
    throw ContractError("decoder tape is stale: parameters changed after the forward pass");
  if (targets.size() != tape.log_probs.rows) throw ShapeError("nll_backward: targets do not match the tape");
  const auto& cfg = p.config;
  const std::size_t d = cfg.d_model;
  const std::size_t hd = cfg.head_dim();
  const std::size_t plen = tape.prefix_length;
  const std::size_t len = tape.x_final.rows;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  DenseMatrix dx(len, d);
  {
    Vector dlogit(cfg.vocab);
    Vector dn(d);
    for (std::size_t t = 0; t < targets.size(); ++t) {
      const std::size_t i = plen - 1 + t;
      for (std::size_t c = 0; c < cfg.vocab; ++c) dlogit[c] = std::exp(tape.log_probs(t, c));
      dlogit[targets[t]] -= 1.0;
      for (std::size_t c = 0; c < cfg.vocab; ++c) grads.head_bias[c] += dlogit[c];
      outer_add(tape.n_final.row(t), dlogit, grads.head);
      std::fill(dn.begin(), dn.end(), 0.0);
      row_times_transpose(dlogit, p.head, dn);
      rms_norm_backward(tape.x_final.row(i), p.final_norm, tape.r_final[t], dn, dx.row(i), grads.final_norm);
    }
  }

  Vector tmp_d(d), tmp_f(cfg.ffn);
  for (std::size_t bi = p.blocks.size(); bi-- > 0;) {
    const auto& blk = p.blocks[bi];
    auto& gb = grads.blocks[bi];
    const auto& bt = tape.blocks[bi];
    // Feed-forward branch: x_out = x_mid + tanh(n2 W1 + b1) W2 + b2.
    DenseMatrix dmid = dx;
    for (std::size_t i = 0; i < len; ++i) {
      const auto dy = dx.row(i);
      for (std::size_t c = 0; c < d; ++c) gb.b2[c] += dy[c];
      outer_add(bt.hidden.row(i), dy, gb.w2);
      std::fill(tmp_f.begin(), tmp_f.end(), 0.0);
      row_times_transpose(dy, blk.w2, tmp_f);
      const auto hr = bt.hidden.row(i);
      for (std::size_t c = 0; c < cfg.ffn; ++c) tmp_f[c] *= 1.0 - hr[c] * hr[c];
      for (std::size_t c = 0; c < cfg.ffn; ++c) gb.b1[c] += tmp_f[c];
      outer_add(bt.n2.row(i), tmp_f, gb.w1);
      std::fill(tmp_d.begin(), tmp_d.end(), 0.0);
      row_times_transpose(tmp_f, blk.w1, tmp_d);
      rms_norm_backward(bt.x_mid.row(i), blk.norm2, bt.r2[i], tmp_d, dmid.row(i), gb.norm2);
    }
    // Attention branch: x_mid = x_in + attn_out Wo.
    DenseMatrix din = dmid;
    DenseMatrix dao(len, d), dq(len, d), dk(len, d), dv(len, d);
    for (std::size_t i = 0; i < len; ++i) {
      outer_add(bt.attn_out.row(i), dmid.row(i), gb.wo);
      row_times_transpose(dmid.row(i), blk.wo, dao.row(i));
    }
    std::vector<double> da(len);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const std::size_t off = h * hd;
      const auto& w = bt.weights[h];
      for (std::size_t i = 0; i < len; ++i) {
        const double* doi = dao.data.data() + i * d + off;
        double sum = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* vj = bt.v.data.data() + j * d + off;
          double s = 0.0;
          for (std::size_t c = 0; c < hd; ++c) s += doi[c] * vj[c];
          da[j] = s;
          sum += w(i, j) * s;
        }
        double* dqi = dq.data.data() + i * d + off;
        const double* qi = bt.q.data.data() + i * d + off;
        for (std::size_t j = 0; j <= i; ++j) {
          const double a = w(i, j);
          const double ds = a * (da[j] - sum) * scale;
          const double* kj = bt.k.data.data() + j * d + off;
          double* dkj = dk.data.data() + j * d + off;
          double* dvj = dv.data.data() + j * d + off;
          for (std::size_t c = 0; c < hd; ++c) {
            dqi[c] += ds * kj[c];
            dkj[c] += ds * qi[c];
            dvj[c] += a * doi[c];
          }
        }
      }
    }
    for (std::size_t i = 0; i < len; ++i) {
      outer_add(bt.n1.row(i), dq.row(i), gb.wq);
      outer_add(bt.n1.row(i), dk.row(i), gb.wk);
      outer_add(bt.n1.row(i), dv.row(i), gb.wv);
      std::fill(tmp_d.begin(), tmp_d.end(), 0.0);
      row_times_transpose(dq.row(i), blk.wq, tmp_d);
      row_times_transpose(dk.row(i), blk.wk, tmp_d);
      row_times_transpose(dv.row(i), blk.wv, tmp_d);
      rms_norm_backward(bt.x_in.row(i), blk.norm1, bt.r1[i], tmp_d, din.row(i), gb.norm1);
    }
    dx = std::move(din);
  }

  DenseMatrix dprefix(plen, d);
  for (std::size_t i = 0; i < len; ++i) {
    const auto g = dx.row(i);
    auto gp = grads.positions.row(i);
    for (std::size_t c = 0; c < d; ++c) gp[c] += g[c];
    if (i < plen) {
      std::copy(g.begin(), g.end(), dprefix.row(i).begin());
    } else {
      auto ge = grads.token_embedding.row(tape.inputs[i - plen]);
      for (std::size_t c = 0; c < d; ++c) ge[c] += g[c];
    }
  }
  return dprefix;
}

/// Incremental decoding state: cached keys and values for every block.
class DecoderState {
 public:
  explicit DecoderState(const DecoderParams& p) : p_(&p) {
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
      k_.emplace_back(p.config.context, p.config.d_model);
      v_.emplace_back(p.config.context, p.config.d_model);
    }
  }

  std::size_t length() const { return len_; }

  /// Appends one input row (before positional encoding) and returns the
  /// next-token log-probabilities at that position.
  Vector push(std::span<const double> input) {
    using namespace decoder_detail;
    const auto& p = *p_;
    const auto& cfg = p.config;
    const std::size_t d = cfg.d_model;
    const std::size_t hd = cfg.head_dim();
    if (len_ >= cfg.context)
      throw ContextError("decoding past the context window of " + std::to_string(cfg.context));
    if (input.size() != d) throw ShapeError("decoder input row has the wrong dim");
    const std::size_t i = len_;
    Vector x(d);
    const auto pos = p.positions.row(i);
    for (std::size_t c = 0; c < d; ++c) x[c] = input[c] + pos[c];
    Vector n(d), q(d), ao(d), h(cfg.ffn), w(i + 1);
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
      const auto& blk = p.blocks[b];
      rms_norm(x, blk.norm1, n);
      std::fill(q.begin(), q.end(), 0.0);
      row_times(n, blk.wq, q);
      row_times(n, blk.wk, k_[b].row(i));
      row_times(n, blk.wv, v_[b].row(i));
      std::fill(ao.begin(), ao.end(), 0.0);
      for (std::size_t hh = 0; hh < cfg.heads; ++hh) attend_row(q, k_[b], v_[b], i, hh * hd, hd, w, ao);
      row_times(ao, blk.wo, x);
      rms_norm(x, blk.norm2, n);
      std::copy(blk.b1.begin(), blk.b1.end(), h.begin());
      row_times(n, blk.w1, h);
      for (double& e : h) e = std::tanh(e);
      for (std::size_t c = 0; c < d; ++c) x[c] += blk.b2[c];
      row_times(h, blk.w2, x);
    }
    ++len_;
    rms_norm(x, p.final_norm, n);
    Vector logits(p.head_bias);
    row_times(n, p.head, logits);
    log_softmax_row(logits);
    return logits;
  }

  Vector push_token(std::size_t id) {
    if (id >= p_->config.vocab) throw ContractError("token id outside vocabulary");
    return push(p_->token_embedding.row(id));
  }

 private:
  const DecoderParams* p_;
  std::vector<DenseMatrix> k_;
  std::vector<DenseMatrix> v_;
  std::size_t len_ = 0;
};

enum class DecodeMode { greedy };

/// Greedy decoding from `prefix`. Stops after emitting `eos` (included in
/// the output) or after max_len tokens; the context window also caps length.
/// Ties go to the lowest token id.
inline TokenSeq generate_tokens(const DecoderParams& p, const fusion::FusedSequence& prefix, std::size_t max_len,
                                std::size_t eos = 0, DecodeMode mode = DecodeMode::greedy) {
  (void)mode;
  const std::size_t plen = prefix.total_length();
  if (plen == 0) throw ContractError("decoder prefix is empty");
  if (plen > p.config.context) throw ContextError("prefix longer than the context window");
  DecoderState state(p);
  Vector lp;
  for (std::size_t i = 0; i < plen; ++i) lp = state.push(prefix.row(i));
  TokenSeq out;
  const std::size_t cap = std::min(max_len, p.config.context - plen + 1);
  while (out.size() < cap) {
    const auto best = static_cast<std::size_t>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    out.push_back(best);
    if (best == eos || out.size() == cap) break;
    lp = state.push_token(best);
  }
  return out;
}

/// Prompt token ids looked up in the decoder's embedding table.
inline std::vector<Vector> embed_tokens(const DecoderParams& p, const TokenSeq& ids) {
  std::vector<Vector> out;
  out.reserve(ids.size());
  for (std::size_t id : ids) {
    if (id >= p.config.vocab) throw ContractError("prompt token id outside vocabulary");
    const auto r = p.token_embedding.row(id);
    out.emplace_back(r.begin(), r.end());
  }
  return out;
}

}  // namespace oculus::lm
