#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace preflab {

enum class ErrorCode {
  InvalidArgument,
  ParseError,
  DimensionMismatch,
  DuplicateId,
  IoError,
  NonFinite,
  EmptyInput,
  ConfigError,
  NotFound,
  Conflict,
};

std::string_view to_string(ErrorCode code);

// Every failure surfaced by the library carries a stable machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace preflab
