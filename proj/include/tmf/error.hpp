#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tmf {

// Error categories surface unchanged through the C API and the CLI exit codes.
enum class ErrorCode {
  Parameter,
  Geometry,
  Shape,
  Numeric,
  Format,
  ConfigMismatch,
  Manifest,
  Contract,
  Io,
  InputNotFound,
  DegenerateInput,
  Internal,
};

std::string_view category_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool cond, ErrorCode code, const std::string& message) {
  if (!cond) throw Error(code, message);
}

}  // namespace tmf
