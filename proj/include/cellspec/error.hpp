#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cellspec {

enum class ErrorCode {
  // corpus
  UndecodableInput,
  EmptyDocument,
  DuplicateSpecId,
  LayoutError,
  // model output
  ModelOutputSchemaViolation,
  VocabularyViolation,
  UnparseableVerdict,
  // gateway
  GatewayError,
  ReplayMiss,
  NetworkError,
  CredentialMissing,
  // retrieval
  EmptyCorpus,
  SvdDimTooLarge,
  UnknownChunk,
  OutOfRangeInput,
  EmptyQuery,
  // specgraph
  InvalidGraph,
  // bench
  SchemaViolation,
  CountMismatch,
  LengthMismatch,
  NoPositiveInstances,
  IoError,
  // app
  UsageError,
};

constexpr std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::UndecodableInput: return "UndecodableInput";
    case ErrorCode::EmptyDocument: return "EmptyDocument";
    case ErrorCode::DuplicateSpecId: return "DuplicateSpecId";
    case ErrorCode::LayoutError: return "LayoutError";
    case ErrorCode::ModelOutputSchemaViolation: return "ModelOutputSchemaViolation";
    case ErrorCode::VocabularyViolation: return "VocabularyViolation";
    case ErrorCode::UnparseableVerdict: return "UnparseableVerdict";
    case ErrorCode::GatewayError: return "GatewayError";
    case ErrorCode::ReplayMiss: return "ReplayMiss";
    case ErrorCode::NetworkError: return "NetworkError";
    case ErrorCode::CredentialMissing: return "CredentialMissing";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::SvdDimTooLarge: return "SvdDimTooLarge";
    case ErrorCode::UnknownChunk: return "UnknownChunk";
    case ErrorCode::OutOfRangeInput: return "OutOfRangeInput";
    case ErrorCode::EmptyQuery: return "EmptyQuery";
    case ErrorCode::InvalidGraph: return "InvalidGraph";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NoPositiveInstances: return "NoPositiveInstances";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::UsageError: return "UsageError";
  }
  return "Unknown";
}

// Single exception type for the library; callers switch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Process exit codes used by the command-line tool.
enum class ExitCode : int { Ok = 0, Usage = 2, Data = 3, Gateway = 4 };

constexpr ExitCode exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::UsageError:
    case ErrorCode::EmptyQuery:
      return ExitCode::Usage;
    case ErrorCode::GatewayError:
    case ErrorCode::ReplayMiss:
    case ErrorCode::NetworkError:
    case ErrorCode::CredentialMissing:
      return ExitCode::Gateway;
    default:
      return ExitCode::Data;
  }
}

}  // namespace cellspec
