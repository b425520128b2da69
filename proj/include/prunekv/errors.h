// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace prunekv {

// A violated precondition or invariant of a runtime operation.
class ContractViolation : public std::logic_error {
 public:
  explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

// A configuration rejected before any computation starts.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// Malformed weight, trace or report file.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

#define PRUNEKV_CHECK(cond, msg)                                     \
  do {                                                               \
    if (!(cond)) {                                                   \
      throw ::prunekv::ContractViolation(std::string(__func__) + ": " + \
                                         (msg));                     \
    }                                                                \
  } while (0)

}  // namespace prunekv
