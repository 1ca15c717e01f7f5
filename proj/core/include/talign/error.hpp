#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace talign {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed input data. `location` is a 1-based line number or a byte
// offset depending on the format; 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t location)
      : Error(what), location_(location) {}

  std::size_t location() const noexcept { return location_; }

 private:
  std::size_t location_;
};

// Input that parsed but failed a semantic check.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or value during optimization.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace talign
