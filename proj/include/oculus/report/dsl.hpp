// SPDX-License-Identifier: Apache-2.0
//
// Line-oriented text form of a ReportAST (grammar: docs/report_dsl.ebnf).
//
//   FINDING cup_disc_ratio 0.71 unitless high
//   INFER glaucomatous_optic_neuropathy 0,2
//   DIAGNOSIS Glaucoma
#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>
#include <string_view>
#include <vector>

#include "oculus/report/ast.hpp"

namespace oculus::report {

namespace dsl_detail {

inline bool is_lower_ident(char c) { return (c >= 'a' && c <= 'z') || c == '_'; }
inline bool is_digit(char c) { return c >= '0' && c <= '9'; }
inline bool is_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

inline std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::vector<std::string> label_names() {
  std::vector<std::string> out;
  for (auto n : kLabelNames) out.emplace_back(n);
  return out;
}

class LineParser {
 public:
  LineParser(std::string_view line, std::size_t line_no) : s_(line), line_(line_no) {}

  [[noreturn]] void fail(std::vector<std::string> expected, const std::string& what) const {
    throw ParseError(line_, pos_ + 1, std::move(expected), what);
  }
  [[noreturn]] void fail_at(std::size_t pos, std::vector<std::string> expected, const std::string& what) const {
    throw ParseError(line_, pos + 1, std::move(expected), what);
  }

  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ >= s_.size(); }

  std::string_view keyword() {
    const std::size_t start = pos_;
    while (!at_end() && s_[pos_] >= 'A' && s_[pos_] <= 'Z') ++pos_;
    return s_.substr(start, pos_ - start);
  }

  void space() {
    if (at_end() || s_[pos_] != ' ') fail({"' '"}, "expected a single space");
    ++pos_;
  }

  std::string_view ident(const char* what) {
    const std::size_t start = pos_;
    while (!at_end() && is_lower_ident(s_[pos_])) ++pos_;
    if (pos_ == start) fail({what}, std::string("expected ") + what);
    return s_.substr(start, pos_ - start);
  }

  std::string_view word() {
    const std::size_t start = pos_;
    while (!at_end() && is_alpha(s_[pos_])) ++pos_;
    return s_.substr(start, pos_ - start);
  }

  double number() {
    const std::size_t start = pos_;
    if (!at_end() && s_[pos_] == '-') ++pos_;
    const std::size_t int_start = pos_;
    while (!at_end() && is_digit(s_[pos_])) ++pos_;
    if (pos_ == int_start) fail({"digit"}, "expected a number with two decimals");
    if (at_end() || s_[pos_] != '.') fail({"'.'"}, "expected a number with two decimals");
    ++pos_;
    for (int k = 0; k < 2; ++k) {
      if (at_end() || !is_digit(s_[pos_])) fail({"digit"}, "expected a number with two decimals");
      ++pos_;
    }
    const std::string text(s_.substr(start, pos_ - start));
    return std::strtod(text.c_str(), nullptr);
  }

  std::size_t index() {
    const std::size_t start = pos_;
    while (!at_end() && is_digit(s_[pos_])) ++pos_;
    if (pos_ == start) fail({"digit"}, "expected a finding index");
    if (pos_ - start > 9) fail_at(start, {}, "finding index is too large");
    return static_cast<std::size_t>(std::strtoull(std::string(s_.substr(start, pos_ - start)).c_str(), nullptr, 10));
  }

  bool peek(char c) const { return !at_end() && s_[pos_] == c; }
  void advance() { ++pos_; }

  std::string_view rest() {
    const auto r = s_.substr(pos_);
    pos_ = s_.size();
    return r;
  }

  void end_of_line() {
    if (!at_end()) fail({"end of line"}, "unexpected trailing characters");
  }

 private:
  std::string_view s_;
  std::size_t line_;
  std::size_t pos_ = 0;
};

}  // namespace dsl_detail

/// Serializes a structurally valid AST. Values print with 2 decimals.
inline std::string report_to_text(const ReportAST& ast) {
  ast.validate();
  std::string out;
  auto newline = [&] {
    if (!out.empty()) out += '\n';
  };
  for (const auto& f : ast.findings) {
    newline();
    out += "FINDING " + f.biomarker + ' ' + dsl_detail::format_value(f.value) + ' ' + f.unit + ' ' +
           std::string(to_string(f.flag));
  }
  for (const auto& s : ast.inferences) {
    if (s.template_id.empty()) throw ValidationError("sub-inference has an empty template id");
    for (char c : s.template_id)
      if (!dsl_detail::is_lower_ident(c)) throw ValidationError("template id '" + s.template_id + "' is not [a-z_]+");
    newline();
    out += "INFER " + s.template_id + ' ';
    for (std::size_t k = 0; k < s.citations.size(); ++k) {
      if (k) out += ',';
      out += std::to_string(s.citations[k]);
    }
  }
  if (ast.free_text) {
    const auto& t = *ast.free_text;
    if (t.empty()) throw ValidationError("free text note is empty");
    for (char c : t)
      if (!dsl_detail::is_lower_ident(c) && c != ' ') throw ValidationError("free text note must be [a-z_ ]+");
    newline();
    out += "NOTE " + t;
  }
  newline();
  out += "DIAGNOSIS " + std::string(to_string(ast.diagnosis));
  return out;
}

/// Parses the text form; throws ParseError with line, column and the
/// expected-token set on any violation, including semantic ones (unknown
/// biomarker, unit mismatch, dangling finding index).
inline ReportAST parse_report(std::string_view text) {
  enum Stage { findings, inferences, noted, done };
  ReportAST ast;
  Stage stage = findings;
  std::size_t line_no = 0;
  std::size_t start = 0;
  std::size_t last_length = 0;
  while (true) {
    ++line_no;
    const std::size_t nl = text.find('\n', start);
    const std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    const bool last = nl == std::string_view::npos;
    dsl_detail::LineParser p(line, line_no);

    if (stage == done) {
      // Only a single trailing newline may follow the diagnosis.
      if (last && line.empty()) break;
      p.fail({"end of input"}, "content after DIAGNOSIS");
    }

    std::vector<std::string> expected;
    if (stage == findings) expected.push_back("FINDING");
    if (stage <= inferences) expected.push_back("INFER");
    if (stage <= inferences) expected.push_back("NOTE");
    expected.push_back("DIAGNOSIS");

    const auto kw = p.keyword();
    auto allowed = [&](std::string_view k) {
      for (const auto& e : expected)
        if (e == k) return true;
      return false;
    };
    if (!allowed(kw)) p.fail_at(0, expected, kw.empty() ? "expected a record keyword" : "unexpected record '" + std::string(kw) + "'");

    if (kw == "FINDING") {
      Finding f;
      p.space();
      const std::size_t name_pos = p.pos();
      f.biomarker = std::string(p.ident("biomarker name"));
      std::size_t idx = 0;
      if (!try_find_biomarker(f.biomarker, idx)) p.fail_at(name_pos, {"biomarker name"}, "unknown biomarker '" + f.biomarker + "'");
      p.space();
      f.value = p.number();
      p.space();
      const std::size_t unit_pos = p.pos();
      f.unit = std::string(p.ident("unit"));
      const std::string schema_unit(biomarker_spec(idx).unit);
      if (f.unit != schema_unit) p.fail_at(unit_pos, {schema_unit}, "unit '" + f.unit + "' does not match " + f.biomarker);
      p.space();
      const std::size_t flag_pos = p.pos();
      const auto flag = p.ident("flag");
      if (!try_parse_flag(flag, f.flag)) p.fail_at(flag_pos, {"low", "normal", "high"}, "unknown flag '" + std::string(flag) + "'");
      p.end_of_line();
      ast.findings.push_back(std::move(f));
    } else if (kw == "INFER") {
      stage = inferences;
      SubInference s;
      p.space();
      s.template_id = std::string(p.ident("template id"));
      p.space();
      while (true) {
        const std::size_t idx_pos = p.pos();
        const std::size_t idx = p.index();
        if (idx >= ast.findings.size())
          p.fail_at(idx_pos, {}, "dangling finding index " + std::to_string(idx) + " (report has " +
                                     std::to_string(ast.findings.size()) + " findings)");
        s.citations.push_back(idx);
        if (!p.peek(',')) break;
        p.advance();
      }
      p.end_of_line();
      ast.inferences.push_back(std::move(s));
    } else if (kw == "NOTE") {
      stage = noted;
      p.space();
      const std::size_t text_pos = p.pos();
      const auto body = p.rest();
      if (body.empty()) p.fail_at(text_pos, {"note text"}, "empty note");
      for (std::size_t k = 0; k < body.size(); ++k)
        if (!dsl_detail::is_lower_ident(body[k]) && body[k] != ' ')
          p.fail_at(text_pos + k, {"[a-z_ ]"}, "invalid character in note");
      ast.free_text = std::string(body);
    } else {
      p.space();
      const std::size_t label_pos = p.pos();
      const auto label = p.word();
      if (!try_parse_label(label, ast.diagnosis))
        p.fail_at(label_pos, dsl_detail::label_names(), "unknown diagnosis '" + std::string(label) + "'");
      p.end_of_line();
      stage = done;
    }
    last_length = line.size();
    if (last) break;
    start = nl + 1;
  }
  if (stage != done) throw ParseError(line_no, last_length + 1, {"DIAGNOSIS"}, "report ends without a DIAGNOSIS record");
  return ast;
}

}  // namespace oculus::report
