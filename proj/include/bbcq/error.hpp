// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace bbcq {

enum class ErrorKind {
  kDimension,
  kIndex,
  kContract,
  kParameter,
  kDegenerateScale,
  kDegenerateRange,
  kConfig,
  kIo,
  kMagic,
  kVersion,
  kLength,
  kManifest,
};

/// Short machine-readable category, e.g. "dimension" or "io".
const char* error_kind_name(ErrorKind kind) noexcept;

/// The single exception type thrown by the library. Callers switch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace bbcq
