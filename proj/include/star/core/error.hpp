#pragma once

#include <stdexcept>
#include <string>

namespace star {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised when an op produces NaN/Inf, or an optimizer sees a non-finite gradient.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Malformed or corrupted input file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace star
