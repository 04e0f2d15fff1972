#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace revkit {

enum class ErrorCode {
  MalformedDocument,
  UnbalancedMarkers,
  ProviderUnavailable,
  ProviderError,
  DimMismatch,
  ZeroVector,
  EmptyStore,
  InsufficientData,
  ScorerUnavailable,
  MalformedLLMOutput,
  TooFewPoints,
  EmptyTestSet,
  TooFewVectors,
  EmptySet,
  InsufficientDemonstrations,
  AllCandidatesMalformed,
  UnknownGoldId,
  PreconditionViolation,
  NotFound,
  Conflict,
  Validation,
  Io,
};

std::string_view to_string(ErrorCode code);

/// Every failure surfaced by the library carries one of the codes above so
/// the CLI and HTTP layers can map it to an exit status or response code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace revkit
