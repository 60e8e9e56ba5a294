// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace cotforge {

// Coarse error classes; the CLI maps each to a distinct exit code.
enum class ErrorCategory { kConfig, kInput, kBackend, kInternal };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorCategory::kConfig, what) {}
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& what)
      : Error(ErrorCategory::kInput, what) {}
};

class InternalError : public Error {
 public:
  explicit InternalError(const std::string& what)
      : Error(ErrorCategory::kInternal, what) {}
};

}  // namespace cotforge
