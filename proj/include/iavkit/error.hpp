#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace iavkit {

enum class ErrorKind {
  ZeroVector,
  ShapeMismatch,
  NonFinite,
  ManifestMissing,
  ChecksumMismatch,
  InvariantViolation,
  IoFailure,
  InvalidConfig,
  DegenerateRow,
  IndexOutOfRange,
  EmptyBundle,
  NotAProbabilityVector,
  SampleOrderMismatch,
  MissingImages,
  GridMismatch,
  TooFewPoints,
  ClassUnavailable,
  InvalidArgument,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFinite: return "NonFiniteInput";
    case ErrorKind::ManifestMissing: return "ManifestMissing";
    case ErrorKind::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorKind::InvariantViolation: return "InvariantViolation";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::DegenerateRow: return "DegenerateRow";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::EmptyBundle: return "EmptyBundle";
    case ErrorKind::NotAProbabilityVector: return "NotAProbabilityVector";
    case ErrorKind::SampleOrderMismatch: return "SampleOrderMismatch";
    case ErrorKind::MissingImages: return "MissingImages";
    case ErrorKind::GridMismatch: return "GridMismatch";
    case ErrorKind::TooFewPoints: return "TooFewPoints";
    case ErrorKind::ClassUnavailable: return "ClassUnavailable";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Every failure raised by the toolkit. `kind()` is stable and meant for
/// programmatic dispatch; `what()` carries a human-readable diagnostic.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace iavkit
