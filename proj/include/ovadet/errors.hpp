#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ovadet {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or hyperparameters. The CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input file does not conform to its documented schema (exit code 2).
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition (wrong dimension, non-simplex input, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A requested backend is registered but cannot run in this build.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Carries one message per offending record so callers can report every problem at once.
class ItemizedError : public Error {
 public:
  ItemizedError(const std::string& what, std::vector<std::string> items)
      : Error(what), items_(std::move(items)) {}

  const std::vector<std::string>& items() const noexcept { return items_; }

 private:
  std::vector<std::string> items_;
};

}  // namespace ovadet
