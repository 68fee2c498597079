// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one TOML document with full defaulting. Keys given in a
// file or as `key=value` overrides are applied on top of the defaults; any
// unknown key or mistyped value is a ConfigError.
#pragma once

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "oculus/align/contrastive.hpp"
#include "oculus/core/error.hpp"
#include "oculus/lm/sft.hpp"

namespace oculus::cli {

namespace fs = std::filesystem;

inline constexpr const char* kArtifactRootEnv = "OCULUS_ARTIFACT_ROOT";

struct AblationFlags {
  bool oct_only = false;          // CFP token zeroed in training and inference
  bool standard_infonce = false;  // positive pair kept in the contrastive denominator
  bool random_encoder = false;    // encoders left at their random initialization

  bool any() const { return oct_only || standard_infonce || random_encoder; }
  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct RunConfig {
  std::uint64_t seed = 7;
  std::size_t cohort_size = 2560;
  double split_ratio = 0.8;

  align::AlignConfig align;
  lm::SftConfig sft = [] {
    lm::SftConfig c;
    c.epochs = 30;
    return c;
  }();

  struct Gen {
    std::string generator_url;  // empty: rule engine only
    bool fallback_to_rules = true;
    double timeout_seconds = 30.0;
  } gen;

  struct Eval {
    std::size_t max_report_tokens = 0;  // 0: decoder context
    double probe_lambda = 1e-3;
    std::string judge_url;  // empty: no external judge
    double judge_timeout_seconds = 30.0;
  } eval;

  // Relative paths resolve against artifact_dir.
  struct Paths {
    std::string artifact_dir;
    std::string rules_file;  // empty: built-in rule table
    std::string cohort_file = "cohort.ndjson";
    std::string instructions_file = "instructions.ndjson";
    std::string align_oct_checkpoint = "align_oct.json";
    std::string align_cfp_checkpoint = "align_cfp.json";
    std::string sft_checkpoint = "sft.json";
  } paths;

  AblationFlags ablation;

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : fs::path(paths.artifact_dir) / path;
  }
};

namespace config_detail {

struct Binding {
  std::function<void(const RunConfig&, toml::table&, const std::string&)> emit;
  std::function<void(const toml::node&, RunConfig&)> set;
};

[[noreturn]] inline void bad_type(const std::string& key, const char* want) {
  throw ConfigError("config key '" + key + "' must be " + want);
}

template <class T>
using Ref = std::function<T&(RunConfig&)>;

template <class T, class Stored = T>
Binding make_binding(Ref<T> ref, std::function<T(const toml::node&)> read) {
  return {[ref](const RunConfig& c, toml::table& t, const std::string& leaf) {
            RunConfig copy = c;
            t.insert_or_assign(leaf, static_cast<Stored>(ref(copy)));
          },
          [ref, read](const toml::node& n, RunConfig& c) { ref(c) = read(n); }};
}

inline Binding bind_bool(const std::string& key, Ref<bool> ref) {
  return make_binding<bool>(ref, [key](const toml::node& n) {
    if (!n.is_boolean()) bad_type(key, "a boolean");
    return *n.value<bool>();
  });
}

template <class T>
Binding bind_count(const std::string& key, Ref<T> ref) {
  return make_binding<T, std::int64_t>(ref, [key](const toml::node& n) {
    if (!n.is_integer() || *n.value<std::int64_t>() < 0) bad_type(key, "a non-negative integer");
    return static_cast<T>(*n.value<std::int64_t>());
  });
}

inline Binding bind_size(const std::string& key, Ref<std::size_t> ref) { return bind_count<std::size_t>(key, ref); }
inline Binding bind_u64(const std::string& key, Ref<std::uint64_t> ref) { return bind_count<std::uint64_t>(key, ref); }

inline Binding bind_double(const std::string& key, Ref<double> ref) {
  return make_binding<double>(ref, [key](const toml::node& n) {
    if (n.is_integer()) return static_cast<double>(*n.value<std::int64_t>());
    if (!n.is_floating_point()) bad_type(key, "a number");
    return *n.value<double>();
  });
}

inline Binding bind_string(const std::string& key, Ref<std::string> ref) {
  return make_binding<std::string>(ref, [key](const toml::node& n) {
    if (!n.is_string()) bad_type(key, "a string");
    return *n.value<std::string>();
  });
}

// Dotted key -> binding. std::map keeps the emitted document in a stable order.
inline const std::map<std::string, Binding>& bindings() {
  static const std::map<std::string, Binding> table = [] {
    std::map<std::string, Binding> t;
    auto add = [&](const std::string& key, Binding b) { t.emplace(key, std::move(b)); };
    add("seed", bind_u64("seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }));
    add("cohort_size", bind_size("cohort_size", [](RunConfig& c) -> std::size_t& { return c.cohort_size; }));
    add("split_ratio", bind_double("split_ratio", [](RunConfig& c) -> double& { return c.split_ratio; }));

    add("align.temperature", bind_double("align.temperature", [](RunConfig& c) -> double& { return c.align.temperature; }));
    add("align.batch_size", bind_size("align.batch_size", [](RunConfig& c) -> std::size_t& { return c.align.batch_size; }));
    add("align.epochs", bind_size("align.epochs", [](RunConfig& c) -> std::size_t& { return c.align.epochs; }));
    add("align.learning_rate",
        bind_double("align.learning_rate", [](RunConfig& c) -> double& { return c.align.learning_rate; }));
    add("align.weight_decay",
        bind_double("align.weight_decay", [](RunConfig& c) -> double& { return c.align.weight_decay; }));
    add("align.embed_dim", bind_size("align.embed_dim", [](RunConfig& c) -> std::size_t& { return c.align.embed_dim; }));

    add("sft.epochs", bind_size("sft.epochs", [](RunConfig& c) -> std::size_t& { return c.sft.epochs; }));
    add("sft.learning_rate", bind_double("sft.learning_rate", [](RunConfig& c) -> double& { return c.sft.learning_rate; }));
    add("sft.weight_decay", bind_double("sft.weight_decay", [](RunConfig& c) -> double& { return c.sft.weight_decay; }));
    add("sft.batch_size", bind_size("sft.batch_size", [](RunConfig& c) -> std::size_t& { return c.sft.batch_size; }));
    add("sft.freeze_encoders", bind_bool("sft.freeze_encoders", [](RunConfig& c) -> bool& { return c.sft.freeze_encoders; }));
    add("sft.train_projectors",
        bind_bool("sft.train_projectors", [](RunConfig& c) -> bool& { return c.sft.train_projectors; }));
    add("sft.train_decoder", bind_bool("sft.train_decoder", [](RunConfig& c) -> bool& { return c.sft.train_decoder; }));

    add("gen.generator_url", bind_string("gen.generator_url", [](RunConfig& c) -> std::string& { return c.gen.generator_url; }));
    add("gen.fallback_to_rules",
        bind_bool("gen.fallback_to_rules", [](RunConfig& c) -> bool& { return c.gen.fallback_to_rules; }));
    add("gen.timeout_seconds",
        bind_double("gen.timeout_seconds", [](RunConfig& c) -> double& { return c.gen.timeout_seconds; }));

    add("eval.max_report_tokens",
        bind_size("eval.max_report_tokens", [](RunConfig& c) -> std::size_t& { return c.eval.max_report_tokens; }));
    add("eval.probe_lambda", bind_double("eval.probe_lambda", [](RunConfig& c) -> double& { return c.eval.probe_lambda; }));
    add("eval.judge_url", bind_string("eval.judge_url", [](RunConfig& c) -> std::string& { return c.eval.judge_url; }));
    add("eval.judge_timeout_seconds",
        bind_double("eval.judge_timeout_seconds", [](RunConfig& c) -> double& { return c.eval.judge_timeout_seconds; }));

    add("paths.artifact_dir", bind_string("paths.artifact_dir", [](RunConfig& c) -> std::string& { return c.paths.artifact_dir; }));
    add("paths.rules_file", bind_string("paths.rules_file", [](RunConfig& c) -> std::string& { return c.paths.rules_file; }));
    add("paths.cohort_file", bind_string("paths.cohort_file", [](RunConfig& c) -> std::string& { return c.paths.cohort_file; }));
    add("paths.instructions_file",
        bind_string("paths.instructions_file", [](RunConfig& c) -> std::string& { return c.paths.instructions_file; }));
    add("paths.align_oct_checkpoint",
        bind_string("paths.align_oct_checkpoint", [](RunConfig& c) -> std::string& { return c.paths.align_oct_checkpoint; }));
    add("paths.align_cfp_checkpoint",
        bind_string("paths.align_cfp_checkpoint", [](RunConfig& c) -> std::string& { return c.paths.align_cfp_checkpoint; }));
    add("paths.sft_checkpoint",
        bind_string("paths.sft_checkpoint", [](RunConfig& c) -> std::string& { return c.paths.sft_checkpoint; }));

    add("ablation.oct_only", bind_bool("ablation.oct_only", [](RunConfig& c) -> bool& { return c.ablation.oct_only; }));
    add("ablation.standard_infonce",
        bind_bool("ablation.standard_infonce", [](RunConfig& c) -> bool& { return c.ablation.standard_infonce; }));
    add("ablation.random_encoder",
        bind_bool("ablation.random_encoder", [](RunConfig& c) -> bool& { return c.ablation.random_encoder; }));
    return t;
  }();
  return table;
}

inline void apply_table(const toml::table& t, const std::string& prefix, RunConfig& c) {
  for (const auto& [k, node] : t) {
    const std::string key = prefix + std::string(k.str());
    if (const auto* sub = node.as_table()) {
      apply_table(*sub, key + ".", c);
      continue;
    }
    const auto it = bindings().find(key);
    if (it == bindings().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(node, c);
  }
}

inline toml::table parse_toml(std::string_view text, std::string_view source) {
  try {
    return toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << e;
    throw ConfigError(os.str());
  }
}

}  // namespace config_detail

/// Checks value ranges that the type system does not.
inline void validate(const RunConfig& c) {
  try {
    c.align.validate();
    c.sft.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  if (c.cohort_size < 2) throw ConfigError("cohort_size must be at least 2");
  if (!(c.split_ratio > 0.0 && c.split_ratio < 1.0)) throw ConfigError("split_ratio must lie in (0, 1)");
  if (!(c.eval.probe_lambda > 0.0)) throw ConfigError("eval.probe_lambda must be > 0");
  if (!(c.gen.timeout_seconds > 0.0) || !(c.eval.judge_timeout_seconds > 0.0))
    throw ConfigError("timeouts must be > 0");
  if (c.paths.artifact_dir.empty()) throw ConfigError("paths.artifact_dir is empty");
}

/// Applies a TOML document on top of `c`.
inline void apply_toml(std::string_view text, RunConfig& c, std::string_view source = "config") {
  config_detail::apply_table(config_detail::parse_toml(text, source), "", c);
}

/// Applies one `dotted.key=value` override. Values are TOML literals; a bare
/// word that is not a valid literal is taken as a string.
inline void apply_override(std::string_view assignment, RunConfig& c) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  const std::string key(assignment.substr(0, eq));
  const std::string value(assignment.substr(eq + 1));
  if (!config_detail::bindings().count(key)) throw ConfigError("unknown config key '" + key + "'");
  toml::table t;
  try {
    t = toml::parse(key + " = " + value);
  } catch (const toml::parse_error&) {
    std::string quoted = "\"";
    for (char ch : value) {
      if (ch == '"' || ch == '\\') quoted += '\\';
      quoted += ch;
    }
    quoted += '"';
    t = config_detail::parse_toml(key + " = " + quoted, "override");
  }
  config_detail::apply_table(t, "", c);
}

inline std::string default_artifact_dir() {
  const char* env = std::getenv(kArtifactRootEnv);
  return env && *env ? std::string(env) : std::string("artifacts");
}

/// Full configuration as a TOML document; applying it to a default RunConfig
/// reproduces `c` exactly.
inline toml::table to_toml(const RunConfig& c) {
  toml::table root;
  for (const auto& [key, b] : config_detail::bindings()) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
      b.emit(c, root, key);
      continue;
    }
    const std::string section = key.substr(0, dot);
    if (!root.contains(section)) root.insert(section, toml::table{});
    b.emit(c, *root[section].as_table(), key.substr(dot + 1));
  }
  return root;
}

inline std::string to_toml_text(const RunConfig& c) {
  std::ostringstream os;
  os << to_toml(c) << '\n';
  return os.str();
}

inline nlohmann::json to_json(const RunConfig& c) {
  std::ostringstream os;
  os << toml::json_formatter{to_toml(c)};
  return nlohmann::json::parse(os.str());
}

}  // namespace oculus::cli
