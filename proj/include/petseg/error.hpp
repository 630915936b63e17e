#pragma once

#include <stdexcept>
#include <string>

namespace petseg {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: malformed config, out-of-range parameters, invalid values.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Shape / spacing / origin disagreement between volumes or tensors.
class GeometryError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// File-system or codec failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace petseg
