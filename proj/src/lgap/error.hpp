#pragma once

#include <stdexcept>
#include <string>

namespace lgap {

// Numeric values are shared with the C API (lgap_status).
enum class ErrorCode : int {
  kInvalidArgument = 1,
  kConfig = 2,
  kDomain = 3,
  kShape = 4,
  kIo = 5,
  kAdapter = 6,
  kDivergence = 7,
  kRuntime = 8,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& m) : Error(ErrorCode::kDomain, m) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& m) : Error(ErrorCode::kShape, m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error(ErrorCode::kConfig, m) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error(ErrorCode::kIo, m) {}
};

// An external model (captioner, checkpoint, adapter process) was unavailable
// or failed. Callers must not substitute a fallback.
class AdapterError : public Error {
 public:
  explicit AdapterError(const std::string& m) : Error(ErrorCode::kAdapter, m) {}
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& m) : Error(ErrorCode::kDivergence, m) {}
};

}  // namespace lgap
