#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace semmark {

enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  InsufficientSamples,
  NonFinite,
  ZeroVector,
  TooFewPoints,
  EmptyText,
  ParseError,
  BadMagic,
  TruncatedFile,
  Io,
  Network,
  AuthFailed,
  MalformedResponse,
  BadAlpha,
  BatchTooSmall,
  CorpusTooSmall,
  DivergedLoss,
  PoolExhausted,
  DegenerateLabels,
  BadDim,
  TooFewSamples,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Non-fatal diagnostics go to stderr with a fixed prefix.
void warn(std::string_view message);

}  // namespace semmark
