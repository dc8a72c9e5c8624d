#pragma once

#include <stdexcept>
#include <string>

namespace gc {

enum class ErrorKind {
  DegenerateInput,
  DimensionMismatch,
  ShapeMismatch,
  OutOfBounds,
  IoError,
  UsageError,
  NumericFailure,
};

const char* errorKindName(ErrorKind kind) noexcept;

/// Every failure raised by the library carries one of the kinds above so the
/// C boundary and the CLI can map it to a stable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace gc
