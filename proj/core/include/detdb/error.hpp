#pragma once

#include <stdexcept>
#include <string>

namespace detdb {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user-supplied configuration (bad field, out-of-range knob).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Data that does not conform to the declared schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Caller violated an operation precondition.
class UsageError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

// Store operations issued in the wrong epoch phase.
class PhaseError : public Error {
 public:
  using Error::Error;
};

// An internal invariant was violated; always a bug.
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace detdb
