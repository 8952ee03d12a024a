#include "adaptable/errors.hpp"

#include <atomic>
#include <iostream>

namespace adaptable {

namespace {
std::atomic<bool> g_warnings_enabled{true};
}

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kSchema: return "schema error";
    case ErrorCode::kDimension: return "dimension mismatch";
    case ErrorCode::kNumeric: return "numeric error";
    case ErrorCode::kIo: return "io error";
    case ErrorCode::kConfig: return "config error";
  }
  return "unknown error";
}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

void log_warning(const std::string& message) {
  if (g_warnings_enabled.load(std::memory_order_relaxed)) {
    std::cerr << "[adaptable] warning: " << message << '\n';
  }
}

void set_warnings_enabled(bool enabled) noexcept {
  g_warnings_enabled.store(enabled, std::memory_order_relaxed);
}

}  // namespace adaptable
