#pragma once

#include <stdexcept>
#include <string>

namespace dsrei {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define DSREI_DEFINE_ERROR(Name)          \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  }

DSREI_DEFINE_ERROR(InvalidShape);
DSREI_DEFINE_ERROR(InvalidParameter);
DSREI_DEFINE_ERROR(InvalidConfig);
DSREI_DEFINE_ERROR(HarnessError);
DSREI_DEFINE_ERROR(DegenerateBatch);
DSREI_DEFINE_ERROR(DegenerateInput);
DSREI_DEFINE_ERROR(IoError);
// Malformed command line or configuration file.
DSREI_DEFINE_ERROR(UsageError);
// Raised by the optimizer when a gradient is not finite; the step is skipped.
DSREI_DEFINE_ERROR(AbortStep);

#undef DSREI_DEFINE_ERROR

}  // namespace dsrei
