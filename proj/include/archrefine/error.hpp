#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace archrefine {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed text input (IR, plan, manifest). Carries the 1-based line.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A structurally well-formed value that violates a model invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary file (tensor, label, multi-hot dumps).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace archrefine
