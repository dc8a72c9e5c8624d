#include "gazecontact/error.hpp"

namespace gc {

const char* errorKindName(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::OutOfBounds: return "OutOfBounds";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::UsageError: return "UsageError";
    case ErrorKind::NumericFailure: return "NumericFailure";
  }
  return "Unknown";
}

}  // namespace gc
