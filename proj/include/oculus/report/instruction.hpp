// SPDX-License-Identifier: Apache-2.0
//
// Instruction pairs (prompt, grounded report) for decoder fine-tuning, stored
// as NDJSON lines {"eid", "prompt_text", "report_text"}.
#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

#include "oculus/cohort/cohort.hpp"
#include "oculus/report/dsl.hpp"
#include "oculus/report/engine.hpp"
#include "oculus/report/tokenizer.hpp"

namespace oculus::report {

struct InstructionPair {
  std::uint64_t eid = 0;
  std::string prompt_text;
  std::string report_text;

  friend bool operator==(const InstructionPair&, const InstructionPair&) = default;
};

/// One pair per sample. A sample's stored report is used when present,
/// otherwise the rule engine writes one.
inline std::vector<InstructionPair> build_instruction_pairs(const Cohort& cohort, const EyeGuidelineRules& rules) {
  std::vector<InstructionPair> out;
  out.reserve(cohort.size());
  for (const auto& s : cohort) {
    const ReportAST ast = s.report ? *s.report : eye_guideline_report(s.biomarkers, s.label, rules);
    out.push_back({s.eid, std::string(kQueryPrompt), report_to_text(ast)});
  }
  return out;
}

inline std::string instruction_pairs_to_ndjson(const std::vector<InstructionPair>& pairs) {
  std::string out;
  for (const auto& p : pairs)
    out += nlohmann::json{{"eid", p.eid}, {"prompt_text", p.prompt_text}, {"report_text", p.report_text}}.dump() + '\n';
  return out;
}

inline std::vector<InstructionPair> instruction_pairs_from_ndjson(std::string_view text) {
  std::vector<InstructionPair> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t end = text.find('\n', start);
    ++line_no;
    if (end == std::string_view::npos) throw ParseError(line_no, text.size() - start + 1, {"\\n"}, "unterminated final line");
    const auto line = text.substr(start, end - start);
    start = end + 1;
    try {
      const auto j = nlohmann::json::parse(line);
      InstructionPair p{j.at("eid").get<std::uint64_t>(), j.at("prompt_text").get<std::string>(),
                        j.at("report_text").get<std::string>()};
      (void)parse_report(p.report_text);
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, 1, {"{\"eid\", \"prompt_text\", \"report_text\"}"}, e.what());
    } catch (const ParseError& e) {
      throw ParseError(line_no, 1, {}, std::string("report_text does not parse: ") + e.what());
    }
  }
  return out;
}

}  // namespace oculus::report
