#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ncf {

enum class ErrorCode {
  EmptyCorpus,
  UnknownClass,
  BadWeights,
  NotSPD,
  EmptyMask,
  ShapeMismatch,
  NoGradientSupport,
  ClassCountMismatch,
  InvalidArgument,
  Format,
  Io,
};

std::string_view to_string(ErrorCode code) noexcept;

// Single exception type for the library; callers switch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ncf
