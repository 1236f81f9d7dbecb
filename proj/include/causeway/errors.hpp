#pragma once

#include <stdexcept>
#include <string>

namespace causeway {

// Error taxonomy shared across modules. Every throwing path uses one of
// these so callers (and the CLI) can map failures to exit codes uniformly.

struct InvalidConfigError : std::runtime_error {
  explicit InvalidConfigError(const std::string& msg)
      : std::runtime_error("invalid configuration: " + msg) {}
};

struct InvalidInputError : std::runtime_error {
  explicit InvalidInputError(const std::string& msg)
      : std::runtime_error("invalid input: " + msg) {}
};

struct CycleError : std::runtime_error {
  explicit CycleError(const std::string& msg)
      : std::runtime_error("cycle detected: " + msg) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg)
      : std::runtime_error("numerical instability: " + msg) {}
};

struct ResourceBudgetError : std::runtime_error {
  explicit ResourceBudgetError(const std::string& msg)
      : std::runtime_error("resource budget exceeded: " + msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error("i/o error: " + msg) {}
};

}  // namespace causeway
