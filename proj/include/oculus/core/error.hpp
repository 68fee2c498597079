// SPDX-License-Identifier: Apache-2.0
//
// Exception types shared by every module. Each category maps onto one CLI
// exit code (see tools/oculus_cli.cpp).
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace oculus {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or layer dimensions do not chain.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Sequence longer than a decoder's context window.
class ContextError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

/// A caller broke a documented precondition (stale tape, wrong role, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid domain value (NaN biomarker, cup-to-disc outside (0,1), ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Degenerate numeric input such as a zero-norm vector.
class DegenerateInputError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Non-finite loss or gradient during optimisation.
class TrainingError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// External judge reply that is missing, late, or fails the score schema.
class JudgeError : public EvaluationError {
 public:
  using EvaluationError::EvaluationError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

/// Network failure talking to an external generator or judge endpoint.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// Positioned parse failure; `line` and `column` are 1-based.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::size_t column, std::vector<std::string> expected,
             const std::string& what)
      : Error(format(line, column, expected, what)),
        line_(line),
        column_(column),
        expected_(std::move(expected)) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }
  const std::vector<std::string>& expected() const noexcept { return expected_; }

 private:
  static std::string format(std::size_t line, std::size_t column,
                            const std::vector<std::string>& expected, const std::string& what) {
    std::string msg = "parse error at line " + std::to_string(line) + ", column " +
                      std::to_string(column) + ": " + what;
    if (!expected.empty()) {
      msg += " (expected one of:";
      for (const auto& e : expected) msg += " " + e;
      msg += ")";
    }
    return msg;
  }

  std::size_t line_;
  std::size_t column_;
  std::vector<std::string> expected_;
};

}  // namespace oculus
