#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace crysflow {

// Base for every error raised by the library. Callers that only need a
// message can catch this; the CLI maps it to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateCell : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

class LengthMismatch : public Error {
 public:
  using Error::Error;
};

class EmptyDatabase : public Error {
 public:
  using Error::Error;
};

class NonFiniteState : public Error {
 public:
  using Error::Error;
};

class NonFiniteGradient : public Error {
 public:
  using Error::Error;
};

class RetryBudgetExhausted : public Error {
 public:
  using Error::Error;
};

// Text-format errors carry a 1-based line and column (0 when unknown).
class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::size_t col, const std::string& message)
      : Error("line " + std::to_string(line) + ", col " + std::to_string(col) + ": " + message),
        line_(line),
        col_(col) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t col() const noexcept { return col_; }

 private:
  std::size_t line_;
  std::size_t col_;
};

class MissingTag : public ParseError {
 public:
  MissingTag(std::size_t line, const std::string& tag)
      : ParseError(line, 0, "missing required tag " + tag), tag_(tag) {}
  const std::string& tag() const noexcept { return tag_; }

 private:
  std::string tag_;
};

class MalformedLoop : public ParseError {
 public:
  using ParseError::ParseError;
};

class VersionMismatch : public Error {
 public:
  using Error::Error;
};

class CorruptCheckpoint : public Error {
 public:
  using Error::Error;
};

class UnknownKey : public ParseError {
 public:
  UnknownKey(std::size_t line, const std::string& key)
      : ParseError(line, 1, "unknown configuration key '" + key + "'"), key_(key) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class ConfigTypeError : public ParseError {
 public:
  using ParseError::ParseError;
};

}  // namespace crysflow
