#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace chemkernel {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input text could not be parsed, or parsed into an invalid network.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column)
      : Error(std::to_string(line) + ":" + std::to_string(column) + ": " + what),
        line_(line),
        column_(column) {}

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// Text parsed, but names an unknown species, a non-positive k or a duplicate.
class SemanticError : public ParseError {
 public:
  using ParseError::ParseError;
};

/// A network that violates a structural rule (unknown species, bad k, ...).
class InvalidNetwork : public Error {
 public:
  using Error::Error;
};

class SearchBoundExceeded : public Error {
 public:
  using Error::Error;
};

class NegativeConcentration : public Error {
 public:
  using Error::Error;
};

class PatchConflict : public Error {
 public:
  using Error::Error;
};

class StepSizeUnderflow : public Error {
 public:
  using Error::Error;
};

class NotAFixedPoint : public Error {
 public:
  using Error::Error;
};

class ResourceExceeded : public Error {
 public:
  using Error::Error;
};

class MalformedMap : public Error {
 public:
  using Error::Error;
};

class IneligibleReaction : public Error {
 public:
  using Error::Error;
};

}  // namespace chemkernel
