#pragma once

#include <stdexcept>
#include <string>

namespace rdl {

/// Base of every library error. `code()` is a stable identifier that the CLI
/// prints in its single-line error report.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string &message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string &code() const noexcept { return code_; }

 private:
  std::string code_;
};

#define RDL_DEFINE_ERROR(Name)                                      \
  class Name : public Error {                                       \
   public:                                                          \
    explicit Name(const std::string &message) : Error(#Name, message) {} \
  };

RDL_DEFINE_ERROR(NonDivisible)
RDL_DEFINE_ERROR(InvalidDepth)
RDL_DEFINE_ERROR(InvalidSpec)
RDL_DEFINE_ERROR(ShapeMismatch)
RDL_DEFINE_ERROR(GraphConsumed)
RDL_DEFINE_ERROR(DomainError)
RDL_DEFINE_ERROR(CheckpointMismatch)
RDL_DEFINE_ERROR(FormatError)
RDL_DEFINE_ERROR(DataError)
RDL_DEFINE_ERROR(CorruptRecord)
RDL_DEFINE_ERROR(WrongLength)
RDL_DEFINE_ERROR(EmptyList)
RDL_DEFINE_ERROR(UnknownClass)
RDL_DEFINE_ERROR(DegenerateData)
RDL_DEFINE_ERROR(ConfigError)
RDL_DEFINE_ERROR(UsageError)

#undef RDL_DEFINE_ERROR

}  // namespace rdl
