// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tomofocus {

enum class ErrorKind {
  invalid_config,
  invalid_shape,
  invalid_spec,
  invalid_input,
  invalid_batch,
  invalid_precision,
  degenerate_signal,
  numerical_divergence,
  incompatible_checkpoint,
  parse_error,
  extent_violation,
  io_error,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_config: return "invalid-config";
    case ErrorKind::invalid_shape: return "invalid-shape";
    case ErrorKind::invalid_spec: return "invalid-spec";
    case ErrorKind::invalid_input: return "invalid-input";
    case ErrorKind::invalid_batch: return "invalid-batch";
    case ErrorKind::invalid_precision: return "invalid-precision";
    case ErrorKind::degenerate_signal: return "degenerate-signal";
    case ErrorKind::numerical_divergence: return "numerical-divergence";
    case ErrorKind::incompatible_checkpoint: return "incompatible-checkpoint";
    case ErrorKind::parse_error: return "parse-error";
    case ErrorKind::extent_violation: return "extent-violation";
    case ErrorKind::io_error: return "io-error";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable kind so the
/// CLI can map it onto an exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace tomofocus
