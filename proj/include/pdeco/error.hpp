#pragma once

#include <stdexcept>
#include <string>

namespace pdeco {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Input outside the mathematical domain of an operation (log of zero, division by zero).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value (mode count, head count, grid size, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. calling backward on a non-scalar root.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// The linear solver failed to converge.
class SolverError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file. `offset()` is the byte position where reading failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), detail_(what), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }
  /// Message without the offset suffix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string detail_;
  std::size_t offset_;
};

/// Missing or unwritable path.
class PathError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Zero-norm vector where a direction is required.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

}  // namespace pdeco
