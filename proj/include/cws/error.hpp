#pragma once

#include <stdexcept>
#include <string>

namespace cws {

// Caller broke a documented precondition (shape mismatch, bad index, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A NaN or infinity showed up where the math requires a finite number.
class NumericFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file content (IDX, checkpoint, dataset container, config).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

}  // namespace cws
