#pragma once

#include <stdexcept>
#include <string>

namespace tdom {

// Violated precondition or shape mismatch in an in-process API.
struct ContractError : std::logic_error {
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Bad configuration file or out-of-range config value.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Failure while running (I/O, corrupt checkpoint, diverged training, ...).
struct RuntimeFailure : std::runtime_error {
  explicit RuntimeFailure(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tdom
