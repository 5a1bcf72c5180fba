#pragma once

#include <stdexcept>
#include <string>

namespace bsrkit {

// Root of every error raised by the library. `code()` is the process exit
// code the CLI reports for this category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int code() const noexcept { return 1; }
  virtual const char* kind() const noexcept { return "error"; }
};

#define BSRKIT_DEFINE_ERROR(Name, Kind, Code)                       \
  class Name : public Error {                                       \
   public:                                                          \
    using Error::Error;                                             \
    int code() const noexcept override { return Code; }             \
    const char* kind() const noexcept override { return Kind; }     \
  };

BSRKIT_DEFINE_ERROR(DimensionError, "dimension", 10)
BSRKIT_DEFINE_ERROR(ContractError, "contract", 11)
BSRKIT_DEFINE_ERROR(NumericError, "numeric", 12)
BSRKIT_DEFINE_ERROR(IndexError, "index", 13)
BSRKIT_DEFINE_ERROR(TransformError, "transform", 20)
BSRKIT_DEFINE_ERROR(FormatError, "format", 21)
BSRKIT_DEFINE_ERROR(IoError, "io", 22)
BSRKIT_DEFINE_ERROR(DegenerateInputError, "degenerate_input", 30)
BSRKIT_DEFINE_ERROR(TrainingError, "training", 40)
BSRKIT_DEFINE_ERROR(ConfigError, "config", 50)

#undef BSRKIT_DEFINE_ERROR

}  // namespace bsrkit
