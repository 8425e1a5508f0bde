// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Error taxonomy shared across the library. Each class maps to a distinct
// process exit code so scripted callers can tell misuse from bad data from
// numeric blowups.

#pragma once

#include <stdexcept>
#include <string>

namespace contsup {

// Malformed configuration: unknown keys, invalid values, inconsistent
// combinations. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Dataset ingestion failures: missing files, truncated archives, format
// mismatches. CLI exit code 3.
class IngestError : public std::runtime_error {
 public:
  explicit IngestError(const std::string& what) : std::runtime_error(what) {}
};

// Numeric failure during optimization (non-finite loss or gradient).
// CLI exit code 4.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Broken internal contract (shape mismatch, index out of range). These are
// bugs or caller errors, not recoverable conditions.
class InvariantViolation : public std::logic_error {
 public:
  explicit InvariantViolation(const std::string& what)
      : std::logic_error(what) {}
};

}  // namespace contsup
