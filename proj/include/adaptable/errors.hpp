#pragma once

#include <stdexcept>
#include <string>

namespace adaptable {

enum class ErrorCode {
  kInvalidArgument = 1,
  kParse = 2,
  kSchema = 3,
  kDimension = 4,
  kNumeric = 5,
  kIo = 6,
  kConfig = 7,
};

const char* error_code_name(ErrorCode code) noexcept;

// Every failure raised by the core library. The C API maps `code()` onto
// its status enum one-to-one.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

// Warnings are collected on stderr; tests can silence them.
void log_warning(const std::string& message);
void set_warnings_enabled(bool enabled) noexcept;

}  // namespace adaptable
