#pragma once

#include <stdexcept>
#include <string>

namespace oa {

// Base of every failure raised by the toolkit. `kind()` is a stable
// machine-readable tag used by the CLI error reports.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define OA_DEFINE_ERROR(Name)                                      \
  class Name : public Error {                                      \
   public:                                                         \
    explicit Name(const std::string& message) : Error(#Name, message) {} \
  }

OA_DEFINE_ERROR(ValidationError);
OA_DEFINE_ERROR(ConfigError);
OA_DEFINE_ERROR(DuplicateId);
OA_DEFINE_ERROR(MissingLabel);
OA_DEFINE_ERROR(EmptyClass);
OA_DEFINE_ERROR(TrainingDiverged);
OA_DEFINE_ERROR(ProtocolViolation);
OA_DEFINE_ERROR(EmptyDocument);
OA_DEFINE_ERROR(NumericalError);
OA_DEFINE_ERROR(FeatureNotPresent);
OA_DEFINE_ERROR(FeatureNotInCorpus);
OA_DEFINE_ERROR(EmptyFlaggedSet);
OA_DEFINE_ERROR(RankOutOfRange);
OA_DEFINE_ERROR(IoError);

#undef OA_DEFINE_ERROR

// Raised when an external model cannot be reached or replies with something
// that is not a parseable message. Carries the raw reply for diagnostics.
class TransportError : public Error {
 public:
  TransportError(const std::string& message, std::string raw_reply)
      : Error("TransportError", message), raw_reply_(std::move(raw_reply)) {}

  const std::string& raw_reply() const noexcept { return raw_reply_; }

 private:
  std::string raw_reply_;
};

}  // namespace oa
