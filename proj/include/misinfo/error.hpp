#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace misinfo {

enum class ErrorKind {
  Io,
  MalformedRecord,
  DuplicateId,
  WrongArity,
  SpanOutOfBounds,
  TooFewExamples,
  NotAHashtag,
  MalformedHeader,
  DimensionMismatch,
  DuplicateWord,
  EmptyVocabulary,
  EmptySequence,
  ShapeMismatch,
  EmptyCorpus,
  SingleClassTrainingSet,
  LengthMismatch,
  MissingTags,
  MalformedTags,
  CorpusMismatch,
  DegenerateSamples,
  InvalidCounts,
  GroupTooSmall,
  UnsupportedVersion,
  CorruptFile,
};

inline std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::Io: return "Io";
    case ErrorKind::MalformedRecord: return "MalformedRecord";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::WrongArity: return "WrongArity";
    case ErrorKind::SpanOutOfBounds: return "SpanOutOfBounds";
    case ErrorKind::TooFewExamples: return "TooFewExamples";
    case ErrorKind::NotAHashtag: return "NotAHashtag";
    case ErrorKind::MalformedHeader: return "MalformedHeader";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::DuplicateWord: return "DuplicateWord";
    case ErrorKind::EmptyVocabulary: return "EmptyVocabulary";
    case ErrorKind::EmptySequence: return "EmptySequence";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::SingleClassTrainingSet: return "SingleClassTrainingSet";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::MissingTags: return "MissingTags";
    case ErrorKind::MalformedTags: return "MalformedTags";
    case ErrorKind::CorpusMismatch: return "CorpusMismatch";
    case ErrorKind::DegenerateSamples: return "DegenerateSamples";
    case ErrorKind::InvalidCounts: return "InvalidCounts";
    case ErrorKind::GroupTooSmall: return "GroupTooSmall";
    case ErrorKind::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorKind::CorruptFile: return "CorruptFile";
  }
  return "Unknown";
}

/// Every failure raised by the library. `kind()` identifies the contract
/// violation; `what()` carries a human readable message (file/line when known).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), message_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

}  // namespace misinfo
