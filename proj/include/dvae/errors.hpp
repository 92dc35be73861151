#pragma once

#include <stdexcept>
#include <string>

namespace dvae {

/// Argument outside the mathematical domain of an operation (negative
/// std, alpha >= 1, k_regimes < 2, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Inconsistent shapes, unknown config keys, malformed files.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Requested rate cannot be reached on the admissible alpha range.
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse, e.g. calling backward on a non-scalar node.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Numeric procedure failed to converge; carries the best value found.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double best)
      : std::runtime_error(what), best_value(best) {}
  double best_value;
};

}  // namespace dvae
