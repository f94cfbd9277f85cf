// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace pecop {

/// Stable error categories. The CLI maps each to a process exit code.
enum class ErrorCategory {
  config,         // invalid configuration or spec
  data,           // malformed or out-of-range data
  compatibility,  // checkpoint / model mismatch
  shape,          // tensor extent mismatch
  numeric,        // NaN/Inf or undefined numeric result
  metric,         // metric undefined for the given input
};

const char* category_name(ErrorCategory category) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error(ErrorCategory::config, m) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& m) : Error(ErrorCategory::data, m) {}
};

class CompatibilityError : public Error {
 public:
  explicit CompatibilityError(const std::string& m)
      : Error(ErrorCategory::compatibility, m) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& m) : Error(ErrorCategory::shape, m) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& m) : Error(ErrorCategory::numeric, m) {}
};

class MetricError : public Error {
 public:
  explicit MetricError(const std::string& m) : Error(ErrorCategory::metric, m) {}
};

}  // namespace pecop
