#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mimic {

// Failure categories surfaced by the library. Tests match on the kind, so
// every throw site picks the most specific one.
enum class ErrorKind {
  dimension,
  range,
  empty_modality,
  degenerate_vector,
  empty_batch,
  non_finite,
  config,
  parse,
  validation,
  format,
  build,
  lookup,
  coverage,
  judgment,
  diagnostic,
  internal,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::range: return "range";
    case ErrorKind::empty_modality: return "empty_modality";
    case ErrorKind::degenerate_vector: return "degenerate_vector";
    case ErrorKind::empty_batch: return "empty_batch";
    case ErrorKind::non_finite: return "non_finite";
    case ErrorKind::config: return "config";
    case ErrorKind::parse: return "parse";
    case ErrorKind::validation: return "validation";
    case ErrorKind::format: return "format";
    case ErrorKind::build: return "build";
    case ErrorKind::lookup: return "lookup";
    case ErrorKind::coverage: return "coverage";
    case ErrorKind::judgment: return "judgment";
    case ErrorKind::diagnostic: return "diagnostic";
    case ErrorKind::internal: return "internal";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace mimic
