#pragma once

#include <stdexcept>
#include <string>

namespace ipt {

// Shape/extent disagreements between tensors or images.
class DimensionError : public std::runtime_error {
 public:
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Violated call preconditions (non-scalar loss, mismatched pairs, ...).
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad model/training configuration (indivisible dims, unknown knobs).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unknown task id.
class LookupError : public std::runtime_error {
 public:
  explicit LookupError(const std::string& msg) : std::runtime_error(msg) {}
};

// File problems; message always carries the offending path.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ipt
