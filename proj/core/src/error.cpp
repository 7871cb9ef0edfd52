#include "idpf/error.hpp"

namespace idpf {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::InvalidRange: return "InvalidRange";
    case ErrorCode::FakeInTrainSet: return "FakeInTrainSet";
    case ErrorCode::EmptyIdentity: return "EmptyIdentity";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::NonDifferentiableBackend: return "NonDifferentiableBackend";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonDifferentiableObjective: return "NonDifferentiableObjective";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::NoCorrectlyDetectedFakes: return "NoCorrectlyDetectedFakes";
    case ErrorCode::SingleClassOnly: return "SingleClassOnly";
    case ErrorCode::MissingCounterpart: return "MissingCounterpart";
    case ErrorCode::CodecFailure: return "CodecFailure";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::FileNotFound: return "FileNotFound";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

void fail(ErrorCode code, const std::string& detail) { throw Error(code, detail); }

}  // namespace idpf
