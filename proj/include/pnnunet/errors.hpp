#pragma once

#include <stdexcept>
#include <string>

namespace pnn {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PNN_DEFINE_ERROR(Name)            \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  }

PNN_DEFINE_ERROR(ShapeError);
PNN_DEFINE_ERROR(ConfigError);
PNN_DEFINE_ERROR(LabelError);
PNN_DEFINE_ERROR(TapeError);
PNN_DEFINE_ERROR(NumericError);
PNN_DEFINE_ERROR(DomainError);
PNN_DEFINE_ERROR(FormatError);
PNN_DEFINE_ERROR(UnsupportedError);
PNN_DEFINE_ERROR(SizeError);
PNN_DEFINE_ERROR(DataError);
PNN_DEFINE_ERROR(DegenerateVariance);
PNN_DEFINE_ERROR(DependencyError);
PNN_DEFINE_ERROR(IoError);

#undef PNN_DEFINE_ERROR

}  // namespace pnn
