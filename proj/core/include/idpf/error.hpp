#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace idpf {

enum class ErrorCode {
  InsufficientSamples,
  VersionMismatch,
  CorruptCheckpoint,
  InvalidRange,
  FakeInTrainSet,
  EmptyIdentity,
  IndexOutOfRange,
  NonDifferentiableBackend,
  ShapeMismatch,
  NonDifferentiableObjective,
  ZeroVector,
  NoCorrectlyDetectedFakes,
  SingleClassOnly,
  MissingCounterpart,
  CodecFailure,
  ConfigInvalid,
  FileNotFound,
  ParseError,
};

std::string_view to_string(ErrorCode code);

/// Every failure surfaced by the library carries one of the codes above so
/// callers (and the CLI's exit-code mapping) can branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& detail);

}  // namespace idpf
