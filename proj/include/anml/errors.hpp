#pragma once

#include <stdexcept>
#include <string>

namespace anml {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on the arguments was violated.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A text input could not be parsed. `line()` is 1-based, 0 when unknown.
class ParseError : public InvalidInput {
 public:
  ParseError(const std::string& what, std::size_t line)
      : InvalidInput(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// An iterative search exhausted its budget.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Non-finite intermediate or failed factorization.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// The LP solver did not reach a verdict.
class SolverError : public Error {
 public:
  using Error::Error;
};

}  // namespace anml
