#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ef {

/// Base for every error raised by the library. The `kind` selects the CLI exit code.
class Error : public std::runtime_error {
 public:
  enum class Kind { usage, io, format, numeric };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

// Shape disagreement between operands.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(Kind::format, what) {}
};

// API misuse: non-scalar backward, double backward, empty sums.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(Kind::usage, what) {}
};

class ArgumentError : public Error {
 public:
  explicit ArgumentError(const std::string& what) : Error(Kind::usage, what) {}
};

class BoundsError : public Error {
 public:
  explicit BoundsError(const std::string& what) : Error(Kind::usage, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(Kind::usage, what) {}
};

// Dataset content problems (e.g. a class without pixels).
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(Kind::format, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(Kind::io, what) {}
};

/// Malformed binary file. `offset` is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(Kind::format, what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// A primitive produced NaN or infinity.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(Kind::numeric, what) {}
};

/// Energy descent or training diverged. Carries where it happened.
class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace ef
