#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace refquery {

/// Base of every error raised by the library. Callers that only need a
/// message can catch this; the subclasses let tests and the CLI tell the
/// failure modes apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidShapeError : public Error {
 public:
  using Error::Error;
};

class EmptyBatchError : public Error {
 public:
  using Error::Error;
};

class StaleTapeError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class NoOverlapError : public Error {
 public:
  using Error::Error;
};

class NoReferenceError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

class InvalidArgumentError : public Error {
 public:
  using Error::Error;
};

// Bundle decoding failures.
class FormatError : public Error {
 public:
  using Error::Error;
};
class VersionMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};
class TruncatedFileError : public FormatError {
 public:
  using FormatError::FormatError;
};
class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace refquery
