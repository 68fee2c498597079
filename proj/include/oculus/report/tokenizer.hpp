// SPDX-License-Identifier: Apache-2.0
//
// Closed-vocabulary tokenizer over the report alphabet [A-Za-z0-9_ .,\-\n].
// Letter/underscore runs that name a DSL word (keyword, label, unit, flag,
// biomarker, template) become one token; any other run is spelled with
// single-character tokens. Every other character is its own token.
#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "oculus/report/rules.hpp"

namespace oculus::report {

inline constexpr std::string_view kQueryPrompt = "QUERY grounded_report";

class Tokenizer {
 public:
  static constexpr int kEos = 0;

  Tokenizer() {
    add("<eos>");
    for (char c : std::string_view(" \n.,-_")) add(std::string(1, c));
    for (char c = '0'; c <= '9'; ++c) add(std::string(1, c));
    for (char c = 'a'; c <= 'z'; ++c) add(std::string(1, c));
    for (char c = 'A'; c <= 'Z'; ++c) add(std::string(1, c));
    for (auto w : {"FINDING", "INFER", "NOTE", "DIAGNOSIS", "QUERY", "grounded_report", "low", "normal", "high"})
      add_word(w);
    for (auto l : kLabelNames) add_word(l);
    for (const auto& s : biomarker_schema()) {
      add_word(s.unit);
      add_word(s.name);
    }
    for (auto t : all_template_ids()) add_word(t);
  }

  std::size_t vocab_size() const { return symbols_.size(); }
  const std::string& symbol(int id) const { return symbols_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& symbols() const { return symbols_; }

  std::vector<int> tokenize(std::string_view text) const {
    std::vector<int> out;
    std::size_t i = 0;
    while (i < text.size()) {
      const char c = text[i];
      if (is_word_char(c)) {
        std::size_t j = i;
        while (j < text.size() && is_word_char(text[j])) ++j;
        const std::string run(text.substr(i, j - i));
        if (auto it = words_.find(run); it != words_.end()) {
          out.push_back(it->second);
        } else {
          for (char ch : run) out.push_back(chars_.at(ch));
        }
        i = j;
        continue;
      }
      auto it = chars_.find(c);
      if (it == chars_.end())
        throw ValidationError("character '" + printable(c) + "' at offset " + std::to_string(i) +
                              " is outside the report alphabet");
      out.push_back(it->second);
      ++i;
    }
    return out;
  }

  /// Concatenates symbols; an <eos> id ends the text.
  std::string detokenize(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size())
        throw ValidationError("token id " + std::to_string(id) + " is outside the vocabulary");
      if (id == kEos) break;
      out += symbols_[static_cast<std::size_t>(id)];
    }
    return out;
  }

 private:
  static bool is_word_char(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; }

  static std::string printable(char c) {
    if (c >= 32 && c < 127) return std::string(1, c);
    char buf[8];
    std::snprintf(buf, sizeof buf, "\\x%02x", static_cast<unsigned char>(c));
    return buf;
  }

  int add(std::string s) {
    const int id = static_cast<int>(symbols_.size());
    if (s.size() == 1 && s != "<eos>") chars_[s[0]] = id;
    symbols_.push_back(std::move(s));
    return id;
  }

  void add_word(std::string_view w) {
    if (words_.count(std::string(w))) return;
    words_[std::string(w)] = add(std::string(w));
  }

  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> words_;
  std::unordered_map<char, int> chars_;
};

}  // namespace oculus::report
