#pragma once

#include <stdexcept>
#include <string>

namespace npmd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class DisconnectedGraph : public Error {
 public:
  using Error::Error;
};

class ExponentMismatch : public Error {
 public:
  using Error::Error;
};

class FullSupportViolation : public Error {
 public:
  using Error::Error;
};

class SingularSystem : public Error {
 public:
  using Error::Error;
};

class RunawaySampler : public Error {
 public:
  using Error::Error;
};

class NanLoss : public Error {
 public:
  using Error::Error;
};

class CapViolation : public Error {
 public:
  using Error::Error;
};

/// Raised when two independent computations of the same quantity disagree.
class OracleMismatch : public Error {
 public:
  using Error::Error;
};

/// Raised when a proven bound is violated by an exact computation.
class BoundViolation : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace npmd
