#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace onpro {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ONPRO_DEFINE_ERROR(Name)          \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  }

ONPRO_DEFINE_ERROR(NormalizationError);
ONPRO_DEFINE_ERROR(ShapeError);
ONPRO_DEFINE_ERROR(CacheError);
ONPRO_DEFINE_ERROR(NumericError);
ONPRO_DEFINE_ERROR(ConfigError);
ONPRO_DEFINE_ERROR(SchemaError);
ONPRO_DEFINE_ERROR(ClassUnavailable);
ONPRO_DEFINE_ERROR(InsufficientClasses);
ONPRO_DEFINE_ERROR(AlignmentError);
ONPRO_DEFINE_ERROR(TargetError);
ONPRO_DEFINE_ERROR(EvalError);
ONPRO_DEFINE_ERROR(MetricError);
ONPRO_DEFINE_ERROR(CompareError);
ONPRO_DEFINE_ERROR(CheckpointError);

#undef ONPRO_DEFINE_ERROR

/// Malformed input text; carries the 1-based line the problem was found on.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace onpro
