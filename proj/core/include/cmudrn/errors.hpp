#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace cmudrn {

/// Raised when tensor operands disagree on shape. `dimension()` names the
/// offending axis ("n", "c", "h", "w", or a parameter name for weights).
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string op, std::string dimension, std::size_t expected, std::size_t actual)
      : std::invalid_argument(op + ": shape mismatch in dimension '" + dimension + "' (expected " +
                              std::to_string(expected) + ", got " + std::to_string(actual) + ")"),
        op_(std::move(op)),
        dimension_(std::move(dimension)),
        expected_(expected),
        actual_(actual) {}

  const std::string& op() const noexcept { return op_; }
  const std::string& dimension() const noexcept { return dimension_; }
  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::string op_;
  std::string dimension_;
  std::size_t expected_;
  std::size_t actual_;
};

/// Malformed file content. `offset()` is the byte position where parsing failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VersionError : public std::runtime_error {
 public:
  VersionError(std::uint32_t expected, std::uint32_t actual)
      : std::runtime_error("checkpoint format version " + std::to_string(actual) +
                           " is not supported (expected " + std::to_string(expected) + ")"),
        expected_(expected),
        actual_(actual) {}

  std::uint32_t expected() const noexcept { return expected_; }
  std::uint32_t actual() const noexcept { return actual_; }

 private:
  std::uint32_t expected_;
  std::uint32_t actual_;
};

/// Bad `key = value` configuration: unknown key, malformed value, or a value
/// outside its documented range.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace cmudrn
