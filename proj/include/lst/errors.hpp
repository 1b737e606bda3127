#pragma once

#include <stdexcept>
#include <string>

namespace lst {

/// Operand shapes do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A non-finite value reached an operation that requires finite input.
class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Bad user-supplied data: empty corpora, malformed files, unknown labels.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed CoNLL input, with the offending 1-based line number.
class ParseError : public InputError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : InputError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace lst
