#include "ncf/error.hpp"

namespace ncf {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::UnknownClass: return "UnknownClass";
    case ErrorCode::BadWeights: return "BadWeights";
    case ErrorCode::NotSPD: return "NotSPD";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NoGradientSupport: return "NoGradientSupport";
    case ErrorCode::ClassCountMismatch: return "ClassCountMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Format: return "Format";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace ncf
