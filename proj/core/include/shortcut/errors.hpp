// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace shortcut {

/// Shapes of two operands (or of a file and the data it is applied to) disagree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An input that must be finite contains NaN or Inf.
class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Binary container problems. Each kind is distinguishable so callers (and
/// the CLI) can report a precise cause.
class FormatError : public std::runtime_error {
 public:
  enum class Kind { kBadMagic, kVersionMismatch, kTruncated, kMalformed, kIo };

  FormatError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

const char* to_string(FormatError::Kind kind) noexcept;

}  // namespace shortcut
