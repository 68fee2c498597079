// SPDX-License-Identifier: Apache-2.0
//
// Pipeline commands: gen, align, sft, eval, ablate, report. Each reads its
// inputs from an ArtifactLayout, writes its outputs through a Manifest and
// returns the manifest document. Locking is the caller's job.
#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "oculus/align/checkpoint.hpp"
#include "oculus/align/probe.hpp"
#include "oculus/align/train.hpp"
#include "oculus/cli/artifacts.hpp"
#include "oculus/cli/config.hpp"
#include "oculus/cohort/cohort_io.hpp"
#include "oculus/eval/evaluation.hpp"
#include "oculus/eval/judge.hpp"
#include "oculus/lm/checkpoint.hpp"
#include "oculus/report/external.hpp"
#include "oculus/report/instruction.hpp"

namespace oculus::cli {

using json = nlohmann::json;
using Logger = std::function<void(const std::string&)>;

namespace pipeline_detail {

enum Stream : std::uint64_t { align_oct = 31, align_cfp = 32, sft_init = 33, sft_train = 34 };

inline void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

inline report::EyeGuidelineRules load_rules(const RunConfig& cfg, Manifest* man) {
  if (cfg.paths.rules_file.empty()) return report::default_rules();
  const auto path = cfg.resolve(cfg.paths.rules_file);
  if (!fs::exists(path)) throw ConfigError("rules file " + path.string() + " does not exist");
  if (man) man->input(path);
  auto rules = report::rules_from_json(nn::read_json(path));
  try {
    rules.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("rules file: ") + e.what());
  }
  return rules;
}

inline Cohort load_cohort(const ArtifactLayout& L, Manifest& man) {
  require_artifact(L.cohort, "gen");
  man.input(L.cohort);
  return import_cohort(L.cohort);
}

inline std::vector<report::InstructionPair> load_pairs(const ArtifactLayout& L, Manifest& man) {
  require_artifact(L.instructions, "gen");
  man.input(L.instructions);
  return report::instruction_pairs_from_ndjson(io::read_file(L.instructions));
}

inline std::vector<report::InstructionPair> pairs_for(const std::vector<report::InstructionPair>& pairs,
                                                      const Cohort& subset) {
  std::unordered_set<std::uint64_t> eids;
  for (const auto& s : subset) eids.insert(s.eid);
  std::vector<report::InstructionPair> out;
  for (const auto& p : pairs)
    if (eids.count(p.eid)) out.push_back(p);
  if (out.size() != subset.size()) throw ValidationError("instruction pairs do not cover every cohort sample");
  return out;
}

inline align::AlignResult load_encoder(const fs::path& path, Manifest& man) {
  require_artifact(path, "align");
  man.input(path);
  return align::load_alignment(nn::read_json(path));
}

inline std::uint64_t align_seed(const RunConfig& cfg, Modality m) {
  return derive_seed(cfg.seed, m == Modality::oct ? align_oct : align_cfp);
}

inline std::string relative_to(const fs::path& target, const fs::path& base) {
  return fs::relative(target, base).generic_string();
}

inline json regression_json(const align::RegressionScore& s) { return {{"mae", s.mae}, {"rmse", s.rmse}, {"r2", s.r2}}; }

}  // namespace pipeline_detail

/// Held-out split shared by every command: eid-seeded, so it is identical
/// wherever the cohort file is read.
inline CohortSplit held_out_split(const RunConfig& cfg, const Cohort& cohort) {
  return split_by_eid(cohort, cfg.split_ratio, cfg.seed);
}

inline json cmd_gen(const RunConfig& cfg, const ArtifactLayout& L, const Logger& log = {}) {
  Manifest man("gen", cfg, L.root);
  const auto rules = pipeline_detail::load_rules(cfg, &man);
  auto cohort = sample_cohort(cfg.cohort_size, cfg.seed);
  if (!cfg.gen.generator_url.empty()) {
    report::EndpointConfig ep;
    ep.url = cfg.gen.generator_url;
    ep.timeout_seconds = cfg.gen.timeout_seconds;
    std::size_t fallbacks = 0;
    for (auto& s : cohort) {
      auto g = report::generate_report(s.biomarkers, s.label, rules, ep, cfg.gen.fallback_to_rules);
      fallbacks += g.source == report::ReportSource::rule_engine;
      s.report = std::move(g.ast);
    }
    pipeline_detail::say(log, "external generator: " + std::to_string(cohort.size() - fallbacks) + " reports, " +
                                  std::to_string(fallbacks) + " rule-engine fallbacks");
  }
  man.write(L.cohort, cohort_to_ndjson(cohort, cfg.seed));
  man.write(L.instructions, report::instruction_pairs_to_ndjson(report::build_instruction_pairs(cohort, rules)));
  pipeline_detail::say(log, "cohort of " + std::to_string(cohort.size()) + " samples written to " + L.cohort.string());
  return man.finish(L.manifest("gen"));
}

inline json cmd_align(const RunConfig& cfg, const ArtifactLayout& L, const Logger& log = {}) {
  Manifest man("align", cfg, L.root);
  const auto cohort = pipeline_detail::load_cohort(L, man);
  const auto split = held_out_split(cfg, cohort);
  align::AlignConfig acfg = cfg.align;
  acfg.include_positive_in_denominator = acfg.include_positive_in_denominator || cfg.ablation.standard_infonce;

  json retrieval = json::object();
  std::optional<align::AlignResult> oct;
  for (const Modality m : {Modality::oct, Modality::cfp}) {
    const auto seed = pipeline_detail::align_seed(cfg, m);
    align::AlignResult r;
    if (cfg.ablation.random_encoder) {
      r.model = align::init_aligned_pair(split.train, m, acfg.embed_dim, seed);
      r.config = acfg;
      r.seed = seed;
      pipeline_detail::say(log, std::string(to_string(m)) + " encoder left at random initialization");
    } else {
      const std::string name(to_string(m));
      r = align::train_alignment(split.train, m, acfg, seed, [&](const align::EpochLoss& e) {
        if (e.epoch == 1 || e.epoch % 10 == 0 || e.epoch == acfg.epochs)
          pipeline_detail::say(log, "align " + name + " epoch " + std::to_string(e.epoch) + " loss " + format_double(e.total));
      });
    }
    man.write_json(m == Modality::oct ? L.align_oct : L.align_cfp, align::save_alignment(r));
    man.write(L.align_loss(m), align::loss_curve_csv(r.curve));
    retrieval[std::string(to_string(m))] = {{"top1", align::retrieval_topk(r.model, split.test, 1)},
                                            {"top5", align::retrieval_topk(r.model, split.test, 5)},
                                            {"chance_top1", 1.0 / static_cast<double>(split.test.size())}};
    if (m == Modality::oct) oct = std::move(r);
  }

  // Linear probe of the aligned OCT encoder against its own starting point.
  const auto targets = align::Standardizer::fit(split.train, align::biomarker_indices(Modality::oct));
  const auto random_init =
      align::init_aligned_pair(split.train, Modality::oct, acfg.embed_dim, pipeline_detail::align_seed(cfg, Modality::oct));
  const auto aligned = align::linear_probe_regression(oct->model.image, targets, split.train, split.test, cfg.eval.probe_lambda);
  const auto baseline =
      align::linear_probe_regression(random_init.image, targets, split.train, split.test, cfg.eval.probe_lambda);
  const json report{{"seed", cfg.seed},
                    {"n_train", split.train.size()},
                    {"n_test", split.test.size()},
                    {"retrieval", retrieval},
                    {"linear_probe",
                     {{"lambda", cfg.eval.probe_lambda},
                      {"aligned", pipeline_detail::regression_json(aligned.aggregate)},
                      {"random_init", pipeline_detail::regression_json(baseline.aggregate)},
                      {"delta_r2", aligned.aggregate.r2 - baseline.aggregate.r2}}}};
  man.write_json(L.retrieval(), report);
  pipeline_detail::say(log, "held-out top-1 retrieval oct " + format_double(retrieval["oct"]["top1"].get<double>()) +
                                " cfp " + format_double(retrieval["cfp"]["top1"].get<double>()));
  return man.finish(L.manifest("align"));
}

/// Frozen encoders and the eid-joined examples of one split.
struct PreparedData {
  Cohort cohort;
  CohortSplit split;
  std::vector<report::InstructionPair> pairs;
  align::ImageEncoder oct;
  align::ImageEncoder cfp;
  report::Tokenizer tok;
};

inline PreparedData prepare_data(const RunConfig& cfg, const ArtifactLayout& L, Manifest& man) {
  PreparedData d;
  d.cohort = pipeline_detail::load_cohort(L, man);
  d.split = held_out_split(cfg, d.cohort);
  d.pairs = pipeline_detail::load_pairs(L, man);
  d.oct = pipeline_detail::load_encoder(L.align_oct, man).model.image;
  d.cfp = pipeline_detail::load_encoder(L.align_cfp, man).model.image;
  return d;
}

inline std::vector<lm::SftExample> examples_for(const PreparedData& d, const Cohort& subset) {
  return lm::prepare_examples(pipeline_detail::pairs_for(d.pairs, subset), subset, d.oct, d.cfp, d.tok);
}

inline json cmd_sft(const RunConfig& cfg, const ArtifactLayout& L, const Logger& log = {}) {
  Manifest man("sft", cfg, L.root);
  const auto d = prepare_data(cfg, L, man);
  lm::SftConfig scfg = cfg.sft;
  scfg.zero_cfp_token = cfg.ablation.oct_only;
  auto init = lm::init_stage3(d.oct.embed_dim(), d.cfp.embed_dim(), d.tok.vocab_size(),
                              derive_seed(cfg.seed, pipeline_detail::sft_init));
  const auto all = examples_for(d, d.split.train);
  const auto train = lm::within_context(all, init.decoder.config.context);
  if (train.size() != all.size())
    pipeline_detail::say(log, "skipping " + std::to_string(all.size() - train.size()) + " of " +
                                  std::to_string(all.size()) + " training reports longer than the decoder context");
  auto result = lm::train_sft(train, d.oct, d.cfp, std::move(init), scfg, derive_seed(cfg.seed, pipeline_detail::sft_train),
                              [&](const lm::SftEpoch& e) {
                                pipeline_detail::say(log, "sft epoch " + std::to_string(e.epoch) + " token nll " +
                                                              format_double(e.mean_token_nll));
                              });
  const auto base = L.sft.parent_path();
  lm::Stage3Checkpoint ck{std::move(result), d.tok.symbols(),
                          {pipeline_detail::relative_to(L.align_oct, base), io::sha256_file(L.align_oct)},
                          {pipeline_detail::relative_to(L.align_cfp, base), io::sha256_file(L.align_cfp)}};
  man.write_json(L.sft, lm::save_stage3(ck));
  man.write(L.sft_loss(), lm::sft_curve_csv(ck.result.curve));
  return man.finish(L.manifest("sft"));
}

/// Everything measured on the held-out split for one model.
struct HeldOutEvaluation {
  std::vector<eval::SampleResult> results;
  std::vector<std::string> texts;
  eval::EvaluationSummary summary;
  lm::TokenAccuracy teacher_forced;
  std::size_t teacher_forced_examples = 0;
  std::size_t parsed = 0;

  double parse_rate() const { return results.empty() ? 0.0 : static_cast<double>(parsed) / static_cast<double>(results.size()); }

  json language_model_json() const {
    return {{"token_accuracy", teacher_forced.accuracy()},
            {"structural_token_accuracy", teacher_forced.structural_accuracy()},
            {"mean_token_nll", teacher_forced.mean_token_nll()},
            {"teacher_forced_examples", teacher_forced_examples},
            {"parse_rate", parse_rate()}};
  }
};

/// Grading truth for a sample: its biomarkers, label and the oracle report
/// it was trained on.
inline eval::GradingTruth grading_truth(const CohortSample& s, const report::InstructionPair& pair) {
  return {s.biomarkers, s.label, report::parse_report(pair.report_text)};
}

inline HeldOutEvaluation evaluate_held_out(const lm::Stage3Model& model, const PreparedData& d,
                                           const std::vector<lm::SftExample>& examples, bool zero_cfp,
                                           std::size_t max_tokens, const report::EyeGuidelineRules& rules) {
  HeldOutEvaluation out;
  // Reports longer than the context cannot be teacher-forced; they are still
  // generated (and truncated) and graded below.
  const auto scored = lm::within_context(examples, model.decoder.config.context);
  out.teacher_forced = lm::teacher_forced_metrics(model, scored, lm::TokenClasses(d.tok), zero_cfp);
  out.teacher_forced_examples = scored.size();
  const auto pairs = pipeline_detail::pairs_for(d.pairs, d.split.test);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& s = d.split.test[i];
    if (s.eid != examples[i].eid || pairs[i].eid != s.eid) throw ContractError("held-out examples are out of order");
    auto text = lm::generate_report_text(model, examples[i], d.tok, zero_cfp, max_tokens);
    try {
      (void)report::parse_report(text);
      ++out.parsed;
    } catch (const ParseError&) {
    }
    out.results.push_back(eval::grade_sample(s.eid, text, grading_truth(s, pairs[i]), rules, d.tok));
    out.texts.push_back(std::move(text));
  }
  out.summary = eval::summarize(out.results);
  return out;
}

/// Stage III checkpoint plus the checks that it belongs with these encoders.
inline lm::Stage3Checkpoint load_checked_stage3(const ArtifactLayout& L, const PreparedData& d, Manifest& man) {
  require_artifact(L.sft, "sft");
  man.input(L.sft);
  auto ck = lm::load_stage3(nn::read_json(L.sft));
  lm::check_vocabulary(ck, d.tok);
  const auto base = L.sft.parent_path();
  lm::verify_reference({(base / ck.oct_encoder.path).string(), ck.oct_encoder.sha256});
  lm::verify_reference({(base / ck.cfp_encoder.path).string(), ck.cfp_encoder.sha256});
  if (io::sha256_file(L.align_oct) != ck.oct_encoder.sha256 || io::sha256_file(L.align_cfp) != ck.cfp_encoder.sha256)
    throw ValidationError("the instruction-tuned checkpoint was trained against different encoders; rerun `oculus sft`");
  return ck;
}

inline json cmd_eval(const RunConfig& cfg, const ArtifactLayout& L, const Logger& log = {}) {
  Manifest man("eval", cfg, L.root);
  const auto rules = pipeline_detail::load_rules(cfg, &man);
  const auto d = prepare_data(cfg, L, man);
  const auto ck = load_checked_stage3(L, d, man);
  const auto test = examples_for(d, d.split.test);
  const bool zero_cfp = ck.result.config.zero_cfp_token;
  const auto ev = evaluate_held_out(ck.result.model, d, test, zero_cfp, cfg.eval.max_report_tokens, rules);

  json summary = ev.summary.to_json();
  summary["seed"] = cfg.seed;
  summary["zero_cfp_token"] = zero_cfp;
  summary["language_model"] = ev.language_model_json();

  if (!cfg.eval.judge_url.empty()) {
    report::EndpointConfig ep;
    ep.url = cfg.eval.judge_url;
    ep.timeout_seconds = cfg.eval.judge_timeout_seconds;
    const auto pairs = pipeline_detail::pairs_for(d.pairs, d.split.test);
    std::string csv = "eid";
    for (auto name : eval::kMetricNames) csv += ',' + std::string(name);
    csv += '\n';
    std::size_t failures = 0;
    std::array<double, eval::kNumMetrics> sums{};
    std::size_t scored = 0;
    for (std::size_t i = 0; i < ev.results.size(); ++i) {
      try {
        const auto s = eval::external_judge(ev.texts[i], eval::judge_prompt(grading_truth(d.split.test[i], pairs[i])), ep);
        csv += std::to_string(ev.results[i].eid);
        for (std::size_t k = 0; k < eval::kNumMetrics; ++k) {
          csv += ',' + format_double(s.metrics[k]);
          sums[k] += s.metrics[k];
        }
        csv += '\n';
        ++scored;
      } catch (const JudgeError& e) {
        if (failures++ == 0) pipeline_detail::say(log, std::string("external judge unavailable: ") + e.what());
      }
    }
    json means = json::object();
    for (std::size_t k = 0; k < eval::kNumMetrics; ++k)
      means[std::string(eval::kMetricNames[k])] = scored ? sums[k] / static_cast<double>(scored) : 0.0;
    summary["external_judge"] = {{"scored", scored}, {"failures", failures}, {"metric_means", means}};
    man.write(L.judge_scores(), csv);
  }

  man.write(L.eval_samples(), eval::results_csv(ev.results));
  man.write_json(L.eval_summary(), summary);
  pipeline_detail::say(log, "held-out macro F1 " + format_double(ev.summary.macro_f1) + ", parse rate " +
                                format_double(ev.parse_rate()) + ", token accuracy " +
                                format_double(ev.teacher_forced.accuracy()));
  return man.finish(L.manifest("eval"));
}

inline constexpr std::array<std::string_view, 3> kAblationVariants{"oct_only", "standard_infonce", "random_encoder"};

/// Configuration and layout of one ablation variant, nested under
/// `<root>/ablate/<variant>/`. The cohort always comes from the main run; the
/// OCT-only variant also reuses its encoders.
inline std::pair<RunConfig, ArtifactLayout> ablation_variant(const RunConfig& cfg, const ArtifactLayout& L,
                                                             std::string_view variant) {
  RunConfig vc = cfg;
  vc.ablation = {};
  vc.ablation.oct_only = variant == "oct_only";
  vc.ablation.standard_infonce = variant == "standard_infonce";
  vc.ablation.random_encoder = variant == "random_encoder";
  if (!vc.ablation.any()) throw ConfigError("unknown ablation variant '" + std::string(variant) + "'");
  vc.paths.artifact_dir = (L.root / "ablate" / std::string(variant)).string();
  vc.paths.cohort_file = fs::absolute(L.cohort).string();
  vc.paths.instructions_file = fs::absolute(L.instructions).string();
  if (vc.ablation.oct_only) {
    vc.paths.align_oct_checkpoint = fs::absolute(L.align_oct).string();
    vc.paths.align_cfp_checkpoint = fs::absolute(L.align_cfp).string();
  } else {
    vc.paths.align_oct_checkpoint = "align_oct.json";
    vc.paths.align_cfp_checkpoint = "align_cfp.json";
  }
  vc.paths.sft_checkpoint = "sft.json";
  return {vc, ArtifactLayout::from_config(vc)};
}

inline json ablation_entry(const json& summary) {
  return {{"macro_f1", summary.at("macro_f1")},
          {"malformed", summary.at("malformed")},
          {"metric_means", summary.at("metric_means")},
          {"language_model", summary.at("language_model")}};
}

inline json cmd_ablate(const RunConfig& cfg, const ArtifactLayout& L, const Logger& log = {}) {
  Manifest man("ablate", cfg, L.root);
  require_artifact(L.eval_summary(), "eval");
  man.input(L.eval_summary());
  json variants{{"full", ablation_entry(nn::read_json(L.eval_summary()))}};
  std::vector<std::string_view> chosen;
  for (auto v : kAblationVariants)
    if (!cfg.ablation.any() || (v == "oct_only" && cfg.ablation.oct_only) ||
        (v == "standard_infonce" && cfg.ablation.standard_infonce) ||
        (v == "random_encoder" && cfg.ablation.random_encoder))
      chosen.push_back(v);
  for (auto v : chosen) {
    const auto [vc, VL] = ablation_variant(cfg, L, v);
    pipeline_detail::say(log, "ablation variant " + std::string(v));
    if (!vc.ablation.oct_only) cmd_align(vc, VL, log);
    cmd_sft(vc, VL, log);
    cmd_eval(vc, VL, log);
    man.input(VL.eval_summary());
    variants[std::string(v)] = ablation_entry(nn::read_json(VL.eval_summary()));
  }
  man.write_json(L.ablation(), {{"seed", cfg.seed}, {"variants", variants}});
  return man.finish(L.manifest("ablate"));
}

/// Human-readable rendering of the aggregate JSON (and the ablation table
/// when present) as text and as key,value CSV.
inline std::pair<std::string, std::string> render_report(const json& summary, const std::optional<json>& ablation) {
  std::ostringstream txt;
  std::string csv = "section,key,value\n";
  auto row = [&](const std::string& section, const std::string& key, const json& v) {
    csv += section + ',' + key + ',' + (v.is_number_float() ? format_double(v.get<double>()) : v.dump()) + '\n';
  };
  auto num = [](const json& v) { return v.is_number_float() ? format_double(v.get<double>()) : v.dump(); };
  txt << "held-out samples: " << summary.at("n") << " (malformed " << summary.at("malformed") << ")\n";
  txt << "macro F1: " << num(summary.at("macro_f1")) << "\n";
  row("summary", "n", summary.at("n"));
  row("summary", "malformed", summary.at("malformed"));
  row("summary", "macro_f1", summary.at("macro_f1"));
  txt << "rubric means:\n";
  for (const auto& [k, v] : summary.at("metric_means").items()) {
    txt << "  " << k << ": " << num(v) << "\n";
    row("metric_means", k, v);
  }
  if (summary.contains("language_model")) {
    txt << "language model:\n";
    for (const auto& [k, v] : summary.at("language_model").items()) {
      txt << "  " << k << ": " << num(v) << "\n";
      row("language_model", k, v);
    }
  }
  const auto& cm = summary.at("confusion_matrix");
  txt << "confusion matrix (rows true, columns predicted):\n";
  const auto& labels = cm.at("labels");
  txt << "  " << std::string(13, ' ');
  for (const auto& l : labels) txt << ' ' << std::string(12 - std::min<std::size_t>(12, l.get<std::string>().size()), ' ') << l.get<std::string>();
  txt << "\n";
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const auto name = labels[r].get<std::string>();
    txt << "  " << name << std::string(13 - std::min<std::size_t>(13, name.size()), ' ');
    for (const auto& c : cm.at("counts")[r]) {
      const auto s = c.dump();
      txt << ' ' << std::string(12 - std::min<std::size_t>(12, s.size()), ' ') << s;
    }
    txt << "\n";
  }
  if (ablation) {
    txt << "ablation (macro F1 / quantitative accuracy / mean token NLL):\n";
    for (const auto& [name, v] : ablation->at("variants").items()) {
      txt << "  " << name << ": " << num(v.at("macro_f1")) << " / "
          << num(v.at("metric_means").at("quantitative_accuracy")) << " / "
          << num(v.at("language_model").at("mean_token_nll")) << "\n";
      row("ablation." + name, "macro_f1", v.at("macro_f1"));
      for (const auto& [k, m] : v.at("metric_means").items()) row("ablation." + name, k, m);
      for (const auto& [k, m] : v.at("language_model").items()) row("ablation." + name, k, m);
    }
  }
  return {txt.str(), csv};
}

inline json cmd_report(const RunConfig& cfg, const ArtifactLayout& L, const Logger& log = {}) {
  Manifest man("report", cfg, L.root);
  require_artifact(L.eval_summary(), "eval");
  man.input(L.eval_summary());
  std::optional<json> ablation;
  if (fs::exists(L.ablation())) {
    man.input(L.ablation());
    ablation = nn::read_json(L.ablation());
  }
  const auto [text, csv] = render_report(nn::read_json(L.eval_summary()), ablation);
  man.write(L.report_text(), text);
  man.write(L.report_csv(), csv);
  pipeline_detail::say(log, text);
  return man.finish(L.manifest("report"));
}

}  // namespace oculus::cli
