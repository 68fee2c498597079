// SPDX-License-Identifier: Apache-2.0
//
// Confusion matrix over the 7 diagnosis classes and macro-averaged F1.
#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <utility>
#include <vector>

#include "oculus/cohort/schema.hpp"
#include "oculus/core/error.hpp"

namespace oculus::eval {

using LabelPair = std::pair<DiagnosisLabel, DiagnosisLabel>;  // (true, predicted)

struct ConfusionMatrix {
  std::array<std::array<std::size_t, kNumLabels>, kNumLabels> counts{};  // [true][predicted]

  void add(DiagnosisLabel truth, DiagnosisLabel predicted) { ++counts[index_of(truth)][index_of(predicted)]; }

  std::size_t true_positives(DiagnosisLabel c) const { return counts[index_of(c)][index_of(c)]; }
  std::size_t row_sum(DiagnosisLabel c) const {
    std::size_t n = 0;
    for (auto v : counts[index_of(c)]) n += v;
    return n;
  }
  std::size_t column_sum(DiagnosisLabel c) const {
    std::size_t n = 0;
    for (const auto& row : counts) n += row[index_of(c)];
    return n;
  }
  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& row : counts)
      for (auto v : row) n += v;
    return n;
  }

  double precision(DiagnosisLabel c) const {
    const auto p = column_sum(c);
    return p == 0 ? 0.0 : static_cast<double>(true_positives(c)) / static_cast<double>(p);
  }
  double recall(DiagnosisLabel c) const {
    const auto t = row_sum(c);
    return t == 0 ? 0.0 : static_cast<double>(true_positives(c)) / static_cast<double>(t);
  }
  /// 2TP / (2TP + FP + FN); 0 for a class absent from truth and prediction.
  double f1(DiagnosisLabel c) const {
    const auto tp = true_positives(c);
    const auto denom = row_sum(c) + column_sum(c);
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    j["labels"] = nlohmann::json::array();
    for (auto n : kLabelNames) j["labels"].push_back(n);
    j["counts"] = counts;
    return j;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct MacroF1Result {
  double macro_f1 = 0.0;
  ConfusionMatrix confusion;
};

inline ConfusionMatrix confusion_matrix(const std::vector<LabelPair>& pairs) {
  ConfusionMatrix m;
  for (const auto& [t, p] : pairs) m.add(t, p);
  return m;
}

/// Unweighted mean of per-class F1 over `classes`.
inline MacroF1Result macro_f1(const std::vector<LabelPair>& pairs, const std::vector<DiagnosisLabel>& classes) {
  if (pairs.empty()) throw EvaluationError("macro F1 needs at least one (true, predicted) pair");
  if (classes.empty()) throw EvaluationError("macro F1 needs at least one class");
  MacroF1Result r;
  r.confusion = confusion_matrix(pairs);
  double sum = 0.0;
  for (auto c : classes) sum += r.confusion.f1(c);
  r.macro_f1 = sum / static_cast<double>(classes.size());
  return r;
}

/// Macro F1 over all 7 classes.
inline MacroF1Result macro_f1(const std::vector<LabelPair>& pairs) {
  return macro_f1(pairs, std::vector<DiagnosisLabel>(kAllLabels.begin(), kAllLabels.end()));
}

}  // namespace oculus::eval
