#pragma once

#include <stdexcept>
#include <string>

namespace oce {

/// Violated precondition or shape contract of an operation.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Failure that depends on data (placement, degenerate statistics, ...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class IoErrorKind { Open, Magic, Version, DType, Truncated, Format };

inline const char* to_string(IoErrorKind kind) {
  switch (kind) {
    case IoErrorKind::Open: return "open";
    case IoErrorKind::Magic: return "magic";
    case IoErrorKind::Version: return "version";
    case IoErrorKind::DType: return "dtype";
    case IoErrorKind::Truncated: return "truncated";
    case IoErrorKind::Format: return "format";
  }
  return "unknown";
}

/// File-format error; `kind()` distinguishes the failure class.
class IoError : public std::runtime_error {
 public:
  IoError(IoErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  IoErrorKind kind() const noexcept { return kind_; }

 private:
  IoErrorKind kind_;
};

}  // namespace oce
