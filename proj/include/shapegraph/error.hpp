#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace shapegraph {

enum class ErrorCode {
  BadMagic,
  CountMismatch,
  Truncated,
  UnsupportedFormat,
  MissingFile,
  EmptyManifest,
  DegenerateHistogram,
  EmptyForeground,
  EmptyInput,
  ShapeMismatch,
  KTooLarge,
  CloudTooSmall,
  ArchMismatch,
  NonFiniteLoss,
  DimMismatch,
  InvalidArgument,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::Truncated: return "Truncated";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::EmptyManifest: return "EmptyManifest";
    case ErrorCode::DegenerateHistogram: return "DegenerateHistogram";
    case ErrorCode::EmptyForeground: return "EmptyForeground";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::CloudTooSmall: return "CloudTooSmall";
    case ErrorCode::ArchMismatch: return "ArchMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace shapegraph
