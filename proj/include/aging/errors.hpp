#pragma once

#include <stdexcept>
#include <string>

namespace aging {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid profile, training configuration or CLI invocation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A value violates its domain invariant (unnormalized distribution, age out of range...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Caller broke an operation precondition (shape mismatch, unfrozen model...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Raised by the training loop when any loss component is NaN or infinite.
class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

}  // namespace aging
