#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fpc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value (heads, keep rate, alpha, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Caller-supplied data violates a precondition (label range, camera id, empty gallery).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Numerically degenerate input: zero vectors, zero transport mass.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file. `offset` is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

  /// Same error with the file path prepended.
  FormatError in_file(const std::string& path) const { return FormatError(path + ": " + what(), offset_, 0); }

 private:
  FormatError(const std::string& full, std::uint64_t offset, int) : Error(full), offset_(offset) {}

  std::uint64_t offset_;
};

}  // namespace fpc
