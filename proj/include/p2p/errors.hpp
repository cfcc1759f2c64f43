#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace p2p {

/// Inconsistent or invalid configuration (architecture, optimizer, CLI flags).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input data: missing labels, undersized clouds, unknown shape kinds.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Text-format parse failure carrying the 1-based line it happened on.
class ParseError : public InputError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : InputError("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Binary checkpoint / weight file is malformed or does not match the schema.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated an API precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A function under evaluation (e.g. by the gradient checker) returned NaN.
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace p2p
