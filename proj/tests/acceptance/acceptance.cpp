// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// if any fails. The desk pipeline (gen, align, sft, eval, report) runs twice
// in a scratch directory; criteria 3 to 6 read the first run, criterion 9
// compares the two.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>

#include "oculus/cli/pipeline.hpp"
#include "oculus/eval/corruption.hpp"
#include "oculus/nn/gradcheck.hpp"

using namespace oculus;
using cli::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

// ---- 1: contrastive loss identities ---------------------------------------------

nn::DenseMatrix random_batch(std::size_t n, std::size_t d, Rng& rng) {
  nn::DenseMatrix m(n, d);
  for (double& v : m.data) v = rng.normal();
  return m;
}

Outcome contrastive_identities() {
  const auto t0 = Clock::now();
  align::AlignConfig cfg;
  cfg.temperature = 0.5;
  double worst_equal = 0.0;
  for (std::size_t n : {2u, 8u, 64u}) {
    Rng rng(n);
    nn::DenseMatrix row(1, 16);
    for (double& v : row.data) v = rng.normal();
    nn::DenseMatrix same(n, 16);
    for (std::size_t r = 0; r < n; ++r) std::copy(row.data.begin(), row.data.end(), same.row(r).begin());
    const double want = std::log(static_cast<double>(n - 1));
    worst_equal = std::max({worst_equal, std::abs(align::info_nce_i2t(same, same, cfg) - want),
                            std::abs(align::info_nce_t2i(same, same, cfg) - want)});
  }

  Rng rng(2024);
  double worst_swap = 0.0;
  double min_slack = std::numeric_limits<double>::infinity();
  constexpr std::size_t kBatches = 100000;
  for (std::size_t b = 0; b < kBatches; ++b) {
    const std::size_t n = 2 + rng.below(31);
    const std::size_t d = 1 + rng.below(16);
    auto img = random_batch(n, d, rng);
    auto tab = random_batch(n, d, rng);
    // Every tenth batch pushes toward the bound: positives anti-aligned,
    // negatives aligned.
    if (b % 10 == 0) {
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) {
          img(r, c) = (c == 0 ? 1.0 : 0.0) + 1e-3 * rng.normal();
          tab(r, c) = (c == 0 ? (r % 2 ? 1.0 : -1.0) : 0.0) + 1e-3 * rng.normal();
        }
    }
    const double i2t = align::info_nce_i2t(img, tab, cfg);
    const double t2i = align::info_nce_t2i(img, tab, cfg);
    worst_swap = std::max({worst_swap, std::abs(i2t - align::info_nce_t2i(tab, img, cfg)),
                           std::abs(t2i - align::info_nce_i2t(tab, img, cfg))});
    const double bound = std::log(static_cast<double>(n - 1)) - 4.0;
    min_slack = std::min({min_slack, i2t - bound, t2i - bound});
  }
  const double t = seconds_since(t0);
  const bool pass = worst_equal <= 1e-9 && worst_swap <= 1e-12 && min_slack >= 0.0 && t < 60.0;
  return {pass, "equal-batch err " + fmt(worst_equal) + ", swap err " + fmt(worst_swap) + ", min bound slack " +
                    fmt(min_slack) + " over 1e5 batches, " + fmt(t, 3) + " s"};
}

// ---- 2: finite-difference gradient checks ---------------------------------------

struct GradTally {
  std::size_t seeds = 0;
  std::size_t failed = 0;
  std::size_t checked = 0;
  double worst = 0.0;

  void add(const nn::GradCheckReport& r) {
    ++seeds;
    failed += !r.passed;
    checked += r.checked();
    worst = std::max(worst, r.max_relative_error);
  }
  std::string str(const char* name) const {
    return std::string(name) + " " + std::to_string(seeds - failed) + "/" + std::to_string(seeds) + " (worst rel " +
           fmt(worst, 3) + ", " + std::to_string(checked) + " scalars)";
  }
};

nn::GradCheckOptions fd_options(std::size_t max_per_tensor, std::uint64_t seed) {
  nn::GradCheckOptions opt;
  opt.h = 1e-5;
  opt.tolerance = 1e-4;
  opt.max_per_tensor = max_per_tensor;
  opt.seed = seed;
  return opt;
}

GradTally contrastive_gradients() {
  GradTally t;
  const auto cohort = sample_cohort(40, 14);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Modality m = seed % 2 ? Modality::cfp : Modality::oct;
    auto model = align::init_aligned_pair(cohort, m, 6, seed);
    align::AlignConfig cfg;
    cfg.include_positive_in_denominator = seed % 4 == 3;
    std::vector<nn::Vector> images, tabs;
    for (std::size_t r = 0; r < 4; ++r) {
      const auto& s = cohort[seed + r];
      images.push_back(model.image.normalize((m == Modality::oct ? s.oct : s.cfp).pixels));
      tabs.push_back(model.tab.stats.apply(s.biomarkers));
    }
    std::vector<const nn::Vector*> bi, bt;
    for (std::size_t r = 0; r < 4; ++r) {
      bi.push_back(&images[r]);
      bt.push_back(&tabs[r]);
    }
    auto grads = model.zeros_like();
    (void)align::batch_step(model, bi, bt, cfg, &grads);
    auto loss = [&](const align::AlignedPair& p) { return align::batch_step(p, bi, bt, cfg, nullptr).total; };
    t.add(nn::finite_diff_check(loss, model, grads, fd_options(12, seed)));
  }
  return t;
}

GradTally projector_gradients() {
  GradTally t;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto p = fusion::ProjectorParams::create(6, 5, 7, rng);
    auto vec = [&](std::size_t n) {
      nn::Vector v(n);
      for (double& x : v) x = rng.normal();
      return v;
    };
    const align::Embedding zo(align::EmbeddingRole::z_oct, vec(6)), zc(align::EmbeddingRole::z_cfp, vec(5));
    const auto wc = vec(7), wo = vec(7);
    auto loss = [&](const fusion::ProjectorParams& q) {
      const auto v = fusion::visual_tokens(q, zo, zc);
      double s = 0.0;
      for (std::size_t i = 0; i < 7; ++i) s += wc[i] * v.h_cfp.values[i] + wo[i] * v.h_oct.values[i];
      return s;
    };
    fusion::VisualTape tape;
    (void)fusion::visual_tokens(p, zo, zc, &tape);
    auto grads = p.zeros_like();
    fusion::visual_backward(p, tape, wc, wo, grads);
    t.add(nn::finite_diff_check(loss, p, grads, fd_options(0, seed)));
  }
  return t;
}

GradTally decoder_gradients() {
  GradTally t;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    lm::DecoderConfig c;
    c.vocab = 9;
    c.d_model = 8;
    c.heads = 2;
    c.blocks = 2;
    c.ffn = 12;
    c.context = 16;
    auto m = lm::Stage3Model::create(5, 4, c, rng);
    lm::SftExample ex;
    nn::Vector zo(5), zc(4);
    for (double& v : zo) v = rng.normal();
    for (double& v : zc) v = rng.normal();
    ex.z_oct = align::Embedding(align::EmbeddingRole::z_oct, zo);
    ex.z_cfp = align::Embedding(align::EmbeddingRole::z_cfp, zc);
    for (int i = 0; i < 2; ++i) ex.prompt.push_back(rng.below(c.vocab));
    for (int i = 0; i < 5; ++i) ex.targets.push_back(rng.below(c.vocab));
    auto grads = m.zeros_like();
    (void)lm::example_nll(m, ex, false, &grads);
    auto loss = [&](const lm::Stage3Model& q) { return lm::example_nll(q, ex, false, nullptr); };
    t.add(nn::finite_diff_check(loss, m, grads, fd_options(6, seed)));
  }
  return t;
}

Outcome gradient_checks() {
  const auto t0 = Clock::now();
  const auto a = contrastive_gradients();
  const auto b = projector_gradients();
  const auto c = decoder_gradients();
  const double t = seconds_since(t0);
  const bool pass = a.failed == 0 && b.failed == 0 && c.failed == 0 && t < 300.0;
  return {pass, a.str("contrastive+encoders") + "; " + b.str("projectors") + "; " + c.str("decoder+projectors") + "; " +
                    fmt(t, 3) + " s"};
}

// ---- desk pipeline -----------------------------------------------------------------

struct DeskRun {
  cli::RunConfig cfg;
  cli::ArtifactLayout layout;
  std::map<std::string, json> manifests;
  double total_seconds = 0.0;
};

DeskRun run_desk_pipeline(const fs::path& dir) {
  DeskRun run;
  run.cfg.paths.artifact_dir = dir.string();
  cli::validate(run.cfg);
  run.layout = cli::ArtifactLayout::from_config(run.cfg);
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto t0 = Clock::now();
  const cli::Logger log = [t0](const std::string& m) {
    std::cerr << "[" << fmt(seconds_since(t0), 4) << " s] " << m << '\n';
  };
  using Command = json (*)(const cli::RunConfig&, const cli::ArtifactLayout&, const cli::Logger&);
  for (const auto& [name, fn] : std::vector<std::pair<std::string, Command>>{{"gen", &cli::cmd_gen},
                                                                             {"align", &cli::cmd_align},
                                                                             {"sft", &cli::cmd_sft},
                                                                             {"eval", &cli::cmd_eval},
                                                                             {"report", &cli::cmd_report}})
    run.manifests[name] = fn(run.cfg, run.layout, name == "report" ? cli::Logger{} : log);
  run.total_seconds = seconds_since(t0);
  return run;
}

// ---- 3: retrieval ---------------------------------------------------------------------

Outcome alignment_efficacy(const DeskRun& run) {
  const auto r = nn::read_json(run.layout.retrieval());
  const double top1 = r["retrieval"]["oct"]["top1"].get<double>();
  const double cfp = r["retrieval"]["cfp"]["top1"].get<double>();
  const double t = run.manifests.at("align")["wall_time_seconds"].get<double>();
  return {top1 >= 0.90 && t < 600.0,
          "OCT held-out top-1 " + fmt(top1) + " (chance " + fmt(r["retrieval"]["oct"]["chance_top1"].get<double>()) +
              ", n_test " + std::to_string(r["n_test"].get<std::size_t>()) + "); CFP top-1 " + fmt(cfp) +
              "; both encoders trained in " + fmt(t, 3) + " s"};
}

// ---- 4: linear probe ---------------------------------------------------------------------

Outcome probe_direction(const DeskRun& run) {
  const auto t0 = Clock::now();
  const auto cohort = import_cohort(run.layout.cohort);
  const auto split = cli::held_out_split(run.cfg, cohort);
  const auto aligned = align::load_alignment(nn::read_json(run.layout.align_oct));
  const auto random_init = align::init_aligned_pair(split.train, Modality::oct, run.cfg.align.embed_dim, aligned.seed);
  const auto targets = align::Standardizer::fit(split.train, align::biomarker_indices(Modality::oct));
  const auto a = align::linear_probe_regression(aligned.model.image, targets, split.train, split.test,
                                                run.cfg.eval.probe_lambda);
  const auto b = align::linear_probe_regression(random_init.image, targets, split.train, split.test,
                                                run.cfg.eval.probe_lambda);
  const double t = seconds_since(t0);
  const double dr2 = a.aggregate.r2 - b.aggregate.r2;
  const bool pass = a.names.size() == 31 && dr2 >= 0.2 && a.aggregate.mae < b.aggregate.mae &&
                    a.aggregate.rmse < b.aggregate.rmse && t < 300.0;
  return {pass, "aligned R2 " + fmt(a.aggregate.r2) + " MAE " + fmt(a.aggregate.mae) + " RMSE " + fmt(a.aggregate.rmse) +
                    " vs random-init R2 " + fmt(b.aggregate.r2) + " MAE " + fmt(b.aggregate.mae) + " RMSE " +
                    fmt(b.aggregate.rmse) + " (dR2 " + fmt(dr2) + ", " + std::to_string(a.names.size()) +
                    " targets), " + fmt(t, 3) + " s"};
}

// ---- 5 and 6: instruction tuning and modality ablation ---------------------------------------

struct HeldOut {
  cli::PreparedData data;
  lm::Stage3Checkpoint ck;
  std::vector<lm::SftExample> test;
};

HeldOut load_held_out(const DeskRun& run) {
  cli::Manifest scratch("acceptance", run.cfg, run.layout.root);
  HeldOut h{cli::prepare_data(run.cfg, run.layout, scratch), {}, {}};
  h.ck = cli::load_checked_stage3(run.layout, h.data, scratch);
  h.test = cli::examples_for(h.data, h.data.split.test);
  return h;
}

std::string output_hash(const json& manifest, const std::string& path) {
  for (const auto& o : manifest.at("outputs"))
    if (o.at("path") == path) return o.at("sha256");
  return "";
}

Outcome sft_efficacy(const DeskRun& run, const HeldOut& h) {
  const auto s = nn::read_json(run.layout.eval_summary());
  const auto& lmj = s.at("language_model");
  const double parse = lmj.at("parse_rate").get<double>();
  const double acc = lmj.at("token_accuracy").get<double>();
  const double structural = lmj.at("structural_token_accuracy").get<double>();
  // Freeze contract: the encoder files the checkpoint references hash the same
  // as when alignment wrote them, and the loaded weights hash the same as the
  // weights instruction tuning started from.
  const auto& align_m = run.manifests.at("align");
  const bool files_equal = h.ck.oct_encoder.sha256 == output_hash(align_m, "align_oct.json") &&
                           h.ck.cfp_encoder.sha256 == output_hash(align_m, "align_cfp.json") &&
                           io::sha256_file(run.layout.align_oct) == h.ck.oct_encoder.sha256 &&
                           io::sha256_file(run.layout.align_cfp) == h.ck.cfp_encoder.sha256;
  const auto oct = align::load_alignment(nn::read_json(run.layout.align_oct)).model.image;
  const bool weights_equal = lm::encoder_hash(oct) == lm::encoder_hash(h.data.oct);
  const bool pass = parse >= 0.95 && acc >= 0.85 && structural >= 0.85 && files_equal && weights_equal;
  return {pass, "held-out parse rate " + fmt(parse) + " over " + std::to_string(s.at("n").get<std::size_t>()) +
                    " reports, token accuracy " + fmt(acc) + " (structural " + fmt(structural) + "), encoder hashes " +
                    (files_equal && weights_equal ? "unchanged" : "CHANGED") + ", " +
                    std::to_string(h.ck.result.curve.size()) + " epochs in " +
                    fmt(run.manifests.at("sft")["wall_time_seconds"].get<double>(), 3) + " s"};
}

Outcome modality_ablation(const DeskRun& run, const HeldOut& h) {
  const auto t0 = Clock::now();
  const auto rules = report::default_rules();
  const auto full = cli::evaluate_held_out(h.ck.result.model, h.data, h.test, false, run.cfg.eval.max_report_tokens, rules);
  const auto zero = cli::evaluate_held_out(h.ck.result.model, h.data, h.test, true, run.cfg.eval.max_report_tokens, rules);
  const double nll_full = full.teacher_forced.mean_token_nll();
  const double nll_zero = zero.teacher_forced.mean_token_nll();
  const double q_full = full.summary.metric_means[0];
  const double q_zero = zero.summary.metric_means[0];
  const bool pass = nll_zero > nll_full && q_full - q_zero >= 5.0;
  return {pass, "mean token NLL " + fmt(nll_full) + " -> " + fmt(nll_zero) + ", quantitative_accuracy " + fmt(q_full) +
                    " -> " + fmt(q_zero) + " (drop " + fmt(q_full - q_zero) + " points), " + fmt(seconds_since(t0), 3) +
                    " s"};
}

// ---- 7: rubric soundness -------------------------------------------------------------------

Outcome rubric_soundness() {
  const auto rules = report::default_rules();
  const report::Tokenizer tok;
  auto truth = [&](std::size_t i, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0, i));
    eval::GradingTruth t;
    t.label = kAllLabels[i % kNumLabels];
    t.biomarkers = sample_biomarkers(t.label, rng);
    t.oracle = report::eye_guideline_report(t.biomarkers, t.label, rules);
    return t;
  };
  std::size_t identity = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    const auto t = truth(i, 77);
    const auto s = eval::rubric_score(t.oracle, t, rules, tok);
    identity += std::all_of(s.metrics.begin(), s.metrics.end(), [](double v) { return v == 100.0; });
  }
  bool pass = identity == 1000;
  std::string detail = "self-grading " + std::to_string(identity) + "/1000 at 100 on all six metrics;";
  for (auto c : eval::kAllCorruptions) {
    std::size_t trials = 0, decreased = 0, skipped = 0;
    for (std::size_t i = 0; trials < 100; ++i) {
      const auto t = truth(i, 78);
      Rng rng(derive_seed(78, 1 + static_cast<std::uint64_t>(c), i));
      const auto bad = eval::corrupt(c, t.oracle, t, rules, rng);
      if (!bad) {
        ++skipped;
        continue;
      }
      ++trials;
      const auto k = eval::target_metric(c);
      decreased += eval::rubric_score(*bad, t, rules, tok).metrics[k] < eval::rubric_score(t.oracle, t, rules, tok).metrics[k];
    }
    pass = pass && decreased == 100;
    detail += " " + std::string(eval::to_string(c)) + " " + std::to_string(decreased) + "/100";
    if (skipped) detail += " (" + std::to_string(skipped) + " inapplicable skipped)";
    detail += ";";
  }
  detail.pop_back();
  return {pass, detail};
}

// ---- 8: classification metrics and label priors ----------------------------------------------

// Per-class precision and recall counted straight from the pairs.
double brute_force_macro_f1(const std::vector<eval::LabelPair>& pairs, std::array<std::size_t, kNumLabels>& tps) {
  double sum = 0.0;
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    const auto c = kAllLabels[k];
    double tp = 0, fp = 0, fn = 0;
    for (const auto& [t, p] : pairs) {
      if (t == c && p == c) ++tp;
      if (t != c && p == c) ++fp;
      if (t == c && p != c) ++fn;
    }
    tps[k] = static_cast<std::size_t>(tp);
    if (tp == 0) continue;
    const double prec = tp / (tp + fp), rec = tp / (tp + fn);
    sum += 2 * prec * rec / (prec + rec);
  }
  return sum / static_cast<double>(kNumLabels);
}

Outcome classification_metrics() {
  Rng rng(8);
  double worst = 0.0;
  bool counts_equal = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(500);
    std::vector<eval::LabelPair> pairs;
    for (std::size_t i = 0; i < n; ++i)
      pairs.emplace_back(kAllLabels[rng.below(kNumLabels)], kAllLabels[rng.below(kNumLabels)]);
    std::array<std::size_t, kNumLabels> tps{};
    const double want = brute_force_macro_f1(pairs, tps);
    const auto got = eval::macro_f1(pairs);
    worst = std::max(worst, std::abs(got.macro_f1 - want));
    for (std::size_t k = 0; k < kNumLabels; ++k) counts_equal = counts_equal && got.confusion.true_positives(kAllLabels[k]) == tps[k];
  }
  // Class distribution of the source cohort, in percent.
  constexpr std::array<double, kNumLabels> kTargetSharesPercent{38.40, 36.05, 19.95, 3.40, 1.16, 0.86, 0.18};
  constexpr std::size_t kCohort = 15663;
  const auto cohort = sample_cohort(kCohort, 1);
  std::array<std::size_t, kNumLabels> seen{};
  for (const auto& s : cohort) ++seen[index_of(s.label)];
  double worst_pp = 0.0;
  for (std::size_t k = 0; k < kNumLabels; ++k)
    worst_pp = std::max(worst_pp, std::abs(100.0 * static_cast<double>(seen[k]) / kCohort - kTargetSharesPercent[k]));
  const bool pass = worst <= 1e-12 && counts_equal && worst_pp <= 0.5;
  return {pass, "macro F1 vs brute force over 1000 pairings: max |diff| " + fmt(worst, 3) + ", per-class counts " +
                    (counts_equal ? "identical" : "DIFFER") + "; label shares at n = 15663 within " + fmt(worst_pp, 3) +
                    " pp of the class priors"};
}

// ---- 9: determinism -----------------------------------------------------------------------------

Outcome determinism(const DeskRun& a, const DeskRun& b) {
  std::size_t compared = 0, differing = 0;
  std::string first_diff;
  for (const auto& [name, ma] : a.manifests) {
    const auto& mb = b.manifests.at(name);
    if (ma.at("outputs") != mb.at("outputs")) {
      ++differing;
      if (first_diff.empty()) first_diff = name;
    }
    compared += ma.at("outputs").size();
  }
  const bool summaries_equal = io::read_file(a.layout.eval_summary()) == io::read_file(b.layout.eval_summary());
  return {differing == 0 && summaries_equal,
          std::to_string(compared) + " artifacts over " + std::to_string(a.manifests.size()) + " commands " +
              (differing ? "DIFFER first in " + first_diff : std::string("hash-identical")) + "; end-to-end runs took " +
              fmt(a.total_seconds, 4) + " s and " + fmt(b.total_seconds, 4) + " s"};
}

}  // namespace

int main() {
  const char* env = std::getenv("OCULUS_ACCEPTANCE_DIR");
  const fs::path scratch = env && *env ? fs::path(env) : fs::temp_directory_path() / "oculus_acceptance";
  std::vector<std::pair<int, Outcome>> results;
  auto report = [&](int id, const char* name, const Outcome& o) {
    std::printf("criterion %d %-28s %s  %s\n", id, name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    results.emplace_back(id, o);
  };
  auto guarded = [&](int id, const char* name, const std::function<Outcome()>& f) {
    try {
      report(id, name, f());
    } catch (const std::exception& e) {
      report(id, name, {false, std::string("threw: ") + e.what()});
    }
  };

  guarded(1, "contrastive-identities", contrastive_identities);
  guarded(2, "gradient-checks", gradient_checks);
  guarded(7, "rubric-soundness", rubric_soundness);
  guarded(8, "classification-metrics", classification_metrics);

  std::optional<DeskRun> first;
  try {
    first = run_desk_pipeline(scratch / "run_a");
  } catch (const std::exception& e) {
    for (int id : {3, 4, 5, 6, 9}) report(id, "desk-pipeline", {false, std::string("pipeline threw: ") + e.what()});
  }
  if (first) {
    guarded(3, "alignment-efficacy", [&] { return alignment_efficacy(*first); });
    guarded(4, "probe-direction", [&] { return probe_direction(*first); });
    std::optional<HeldOut> held;
    try {
      held = load_held_out(*first);
    } catch (const std::exception& e) {
      for (int id : {5, 6}) report(id, "held-out", {false, std::string("threw: ") + e.what()});
    }
    if (held) {
      guarded(5, "sft-efficacy", [&] { return sft_efficacy(*first, *held); });
      guarded(6, "modality-ablation", [&] { return modality_ablation(*first, *held); });
    }
    guarded(9, "determinism", [&] { return determinism(*first, run_desk_pipeline(scratch / "run_b")); });
  }

  std::sort(results.begin(), results.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  std::size_t passed = 0;
  for (const auto& [id, o] : results) passed += o.pass;
  std::printf("acceptance: %zu/%zu criteria passed\n", passed, results.size());
  if (!std::getenv("OCULUS_KEEP_ACCEPTANCE")) fs::remove_all(scratch);
  return passed == results.size() && results.size() == 9 ? 0 : 1;
}
