#pragma once

#include <stdexcept>
#include <string>

namespace sparc {

// Base of every error raised by the library. The CLI maps subclasses onto
// exit codes (format → 3, everything else → 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ValueError : public Error {
 public:
  using Error::Error;
};

class EmptyContextError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class DegenerateDistributionError : public Error {
 public:
  using Error::Error;
};

}  // namespace sparc
