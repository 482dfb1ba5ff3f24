#pragma once

#include <stdexcept>
#include <string>

namespace t4t {

// Base for every error the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand extents are incompatible with the kernel contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Caller-supplied values violate a precondition (class ids, thresholds, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed file or stream contents.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Inconsistent model / navigation configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, divergence, misuse of the gradient tape.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace t4t
