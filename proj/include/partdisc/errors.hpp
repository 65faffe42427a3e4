#pragma once

#include <stdexcept>
#include <string>

namespace partdisc {

// Base for every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad arguments, bad configuration, unknown options. Exit code 1.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Missing files, malformed inputs, data that violates an operation's
// precondition. Exit code 2.
class DataError : public Error {
 public:
  using Error::Error;
};

// An internal invariant failed to hold. Exit code 3.
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace partdisc
