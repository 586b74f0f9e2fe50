#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace btcxr {

enum class ErrorCode {
  InvalidBox,
  DegenerateBox,
  MissingDimension,
  MalformedRow,
  IoError,
  SchemaVersionMismatch,
  InvalidSpec,
  EmptyDataset,
  FractionTooSmall,
  NoGroundTruth,
  SingleClassOnly,
  AllResamplesUndefined,
  UnknownImage,
  ShapeMismatch,
  ImageTooSmall,
  DivergenceDetected,
  DegenerateLabels,
  InvalidArgument,
};

constexpr std::string_view to_string(ErrorCode c) noexcept {
  switch (c) {
    case ErrorCode::InvalidBox: return "InvalidBox";
    case ErrorCode::DegenerateBox: return "DegenerateBox";
    case ErrorCode::MissingDimension: return "MissingDimension";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::FractionTooSmall: return "FractionTooSmall";
    case ErrorCode::NoGroundTruth: return "NoGroundTruth";
    case ErrorCode::SingleClassOnly: return "SingleClassOnly";
    case ErrorCode::AllResamplesUndefined: return "AllResamplesUndefined";
    case ErrorCode::UnknownImage: return "UnknownImage";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::ImageTooSmall: return "ImageTooSmall";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Domain error raised by every module. `context` carries the offending
/// identifier (row number, image id, path) when there is one.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string context = {})
      : std::runtime_error(message), code_(code), context_(std::move(context)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& context() const noexcept { return context_; }

 private:
  ErrorCode code_;
  std::string context_;
};

}  // namespace btcxr
