#pragma once

#include <stdexcept>
#include <string>

namespace mda {

/// Error categories. The CLI maps each one to a distinct exit code.
enum class ErrorCategory {
  kValidation = 2,
  kConfig = 3,
  kLoad = 4,
  kShape = 5,
  kNumeric = 6,
  kProtocol = 7,
  kRuntime = 8,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& what)
      : Error(ErrorCategory::kValidation, what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what)
      : Error(ErrorCategory::kConfig, what) {}
};

struct LoadError : Error {
  explicit LoadError(const std::string& what)
      : Error(ErrorCategory::kLoad, what) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what)
      : Error(ErrorCategory::kShape, what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what)
      : Error(ErrorCategory::kNumeric, what) {}
};

/// Raised when a sealed (held-out) target label is read by training code.
struct ProtocolViolation : Error {
  explicit ProtocolViolation(const std::string& what)
      : Error(ErrorCategory::kProtocol, what) {}
};

inline int exit_code(ErrorCategory category) {
  return static_cast<int>(category);
}

}  // namespace mda
