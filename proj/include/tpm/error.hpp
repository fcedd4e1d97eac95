#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tpm {

enum class ErrorCode {
  InvalidArgument,
  ZeroVector,
  DimensionMismatch,
  InvalidTarget,
  EmptyMask,
  TooFewPoints,
  DegeneratePriors,
  NoBoundary,
  CountOutOfRange,
  EmptyRecords,
  ConfigInvalid,
  BadMagic,
  BadVersion,
  TruncatedPayload,
  NormViolation,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InvalidTarget: return "InvalidTarget";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::DegeneratePriors: return "DegeneratePriors";
    case ErrorCode::NoBoundary: return "NoBoundary";
    case ErrorCode::CountOutOfRange: return "CountOutOfRange";
    case ErrorCode::EmptyRecords: return "EmptyRecords";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::BadVersion: return "BadVersion";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::NormViolation: return "NormViolation";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above, so
/// callers (the CLI in particular) can branch on the kind without parsing
/// messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

namespace detail {

inline void require(bool ok, ErrorCode code, const char* what) {
  if (!ok) throw Error(code, what);
}

}  // namespace detail
}  // namespace tpm
