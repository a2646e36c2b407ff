#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace simsam {

enum class ErrorCode {
  kInvalidArgument,
  kEmptyMask,
  kShapeMismatch,
  kOutOfBounds,
  kIo,
  kDecode,
  kUnsupportedMedia,
  kTooLarge,
  kBackend,
  kConfig,
  kNotFound,
};

std::string_view to_string(ErrorCode code);

/// Library-wide exception. Every failure path in simsam throws this type so
/// callers (CLI, HTTP service) can map the code onto exit status / HTTP status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace simsam
