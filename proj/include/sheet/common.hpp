#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sheet {

/// Error categories; each maps onto one CLI exit code.
enum class ErrorKind : std::uint8_t {
  Usage = 1,       // bad flags, bad or unknown config keys
  Validation = 2,  // manifest/data contract violations
  Runtime = 3,     // I/O, numerical divergence, digest mismatch, ...
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::Usage, w) {}
};

struct SchemaError : Error {
  explicit SchemaError(const std::string& w) : Error(ErrorKind::Validation, w) {}
};

struct ValidationError : Error {
  ValidationError(const std::string& w, long row = -1)
      : Error(ErrorKind::Validation, w), row_(row) {}
  /// Zero-based data row index (header excluded), or -1 if not row-specific.
  long row() const noexcept { return row_; }

 private:
  long row_;
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorKind::Runtime, w) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error(ErrorKind::Runtime, w) {}
};

/// Raised by correlation metrics when an input has zero variance.
struct UndefinedCorrelation : Error {
  explicit UndefinedCorrelation(const std::string& w)
      : Error(ErrorKind::Runtime, w) {}
};

struct DigestMismatch : Error {
  explicit DigestMismatch(const std::string& w) : Error(ErrorKind::Runtime, w) {}
};

struct DivergenceError : Error {
  explicit DivergenceError(const std::string& w) : Error(ErrorKind::Runtime, w) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace sheet
