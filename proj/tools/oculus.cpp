// SPDX-License-Identifier: Apache-2.0
//
// oculus: data generation, alignment, instruction tuning, evaluation,
// ablations and report rendering over one artifact directory.
//
// Exit codes: 0 success, 1 other failure, 2 config error, 3 missing artifact,
// 4 training divergence, 5 evaluation error.
#include <CLI11.hpp>

#include <iostream>

#include "oculus/cli/pipeline.hpp"

namespace {

using namespace oculus;
using namespace oculus::cli;

struct CommonOptions {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
  bool print_config = false;
};

RunConfig resolve_config(const CommonOptions& o) {
  RunConfig cfg;
  cfg.paths.artifact_dir = default_artifact_dir();
  if (!o.config_file.empty()) {
    if (!fs::exists(o.config_file)) throw ConfigError("config file " + o.config_file + " does not exist");
    apply_toml(io::read_file(o.config_file), cfg, o.config_file);
  }
  for (const auto& kv : o.overrides) apply_override(kv, cfg);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.paths.artifact_dir = o.out;
  validate(cfg);
  return cfg;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const MissingArtifactError*>(&e)) return 3;
  if (dynamic_cast<const TrainingError*>(&e)) return 4;
  if (dynamic_cast<const EvaluationError*>(&e)) return 5;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retinal report pipeline: gen, align, sft, eval, ablate, report"};
  app.require_subcommand(1);
  CommonOptions opts;

  using Command = json (*)(const RunConfig&, const ArtifactLayout&, const Logger&);
  const std::vector<std::tuple<std::string, std::string, Command>> commands{
      {"gen", "Generate the synthetic cohort and instruction pairs", &cmd_gen},
      {"align", "Contrastive alignment of the OCT and CFP encoders", &cmd_align},
      {"sft", "Instruction-tune projectors and decoder on frozen encoders", &cmd_sft},
      {"eval", "Generate and grade held-out reports", &cmd_eval},
      {"ablate", "Run ablation variants and tabulate them beside the full model", &cmd_ablate},
      {"report", "Render the aggregate evaluation as text and CSV", &cmd_report},
  };
  std::string chosen;
  Command run = nullptr;
  for (const auto& [name, help, fn] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opts.config_file, "TOML run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", opts.seed, "Master seed (overrides the config)");
    sub->add_option("--out", opts.out, std::string("Artifact directory (default: $") + kArtifactRootEnv + " or ./artifacts)");
    sub->add_option("--set", opts.overrides, "Override a config key, e.g. --set align.epochs=10")->take_all();
    sub->add_flag("--print-config", opts.print_config, "Print the resolved configuration and exit");
    sub->callback([&chosen, &run, n = name, f = fn] {
      chosen = n;
      run = f;
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const auto cfg = resolve_config(opts);
    if (opts.print_config) {
      std::cout << to_toml_text(cfg);
      return 0;
    }
    const auto layout = ArtifactLayout::from_config(cfg);
    DirectoryLock lock(layout.lock());
    const Logger log = [](const std::string& m) { std::cerr << m << '\n'; };
    const auto manifest = run(cfg, layout, chosen == "report" ? Logger{} : log);
    if (chosen == "report") std::cout << io::read_file(layout.report_text());
    std::cerr << chosen << ": " << manifest.at("outputs").size() << " artifacts, manifest "
              << layout.manifest(chosen).string() << " (" << format_double(manifest.at("wall_time_seconds").get<double>())
              << " s)\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "oculus " << chosen << ": " << e.what() << '\n';
    return exit_code_for(e);
  }
}
