#pragma once

#include <stdexcept>
#include <string>

namespace physord {

// Maps onto CLI exit codes: io -> 1, validation -> 2, numerical -> 3.
enum class ErrorKind { io, validation, numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return 1;
    case ErrorKind::validation: return 2;
    case ErrorKind::numerical: return 3;
  }
  return 1;
}

#define PHYSORD_DEFINE_ERROR(Name, Kind)                                        \
  class Name : public Error {                                                   \
   public:                                                                      \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, #Name ": " + what) {} \
  };

PHYSORD_DEFINE_ERROR(NotSkew, numerical)
PHYSORD_DEFINE_ERROR(Degenerate, numerical)
PHYSORD_DEFINE_ERROR(NoConvergence, numerical)
PHYSORD_DEFINE_ERROR(NonFiniteLoss, numerical)
PHYSORD_DEFINE_ERROR(CovarianceNotPSD, numerical)
PHYSORD_DEFINE_ERROR(DimMismatch, validation)
PHYSORD_DEFINE_ERROR(TapeConsumed, validation)
PHYSORD_DEFINE_ERROR(LengthMismatch, validation)
PHYSORD_DEFINE_ERROR(DataTooShort, validation)
PHYSORD_DEFINE_ERROR(StepOutOfRange, validation)
PHYSORD_DEFINE_ERROR(SchemaMismatch, validation)
PHYSORD_DEFINE_ERROR(ParseError, validation)
PHYSORD_DEFINE_ERROR(ConfigError, validation)
PHYSORD_DEFINE_ERROR(IoError, io)

#undef PHYSORD_DEFINE_ERROR

}  // namespace physord
