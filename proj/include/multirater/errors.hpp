#pragma once

#include <stdexcept>
#include <string>

namespace multirater {

/// Caller passed a value outside an operation's documented domain.
class InputDomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A point cloud or tensor carries no usable shape information.
class DegenerateShapeError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Bisection could not reach the requested agreement target.
class CalibrationFailure : public std::runtime_error {
 public:
  CalibrationFailure(const std::string& what, double lo, double hi)
      : std::runtime_error(what), bracket_low(lo), bracket_high(hi) {}
  double bracket_low;
  double bracket_high;
};

/// A loss or gradient became non-finite during optimization.
class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(const std::string& what, long iter)
      : std::runtime_error(what), iteration(iter) {}
  long iteration;
};

/// Invalid experiment configuration (bad key, value, or combination).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mismatched shapes or a trace that does not belong to the given params.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace multirater
