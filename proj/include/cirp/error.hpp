#pragma once

#include <stdexcept>
#include <string>

namespace cirp {

// Each error category maps onto one CLI exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

// Raised by debug validation when an input violates an operation's precondition.
class ContractError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

}  // namespace cirp
