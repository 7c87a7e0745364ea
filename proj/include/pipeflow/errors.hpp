#pragma once

#include <stdexcept>
#include <string>

namespace pipeflow {

/// Argument outside the mathematical domain of an operation (L <= 0, t < 0, ...).
struct domain_error : std::domain_error {
  using std::domain_error::domain_error;
};

/// Inconsistent or mismatched inputs (grid mismatch, bad regime fields, bad config).
struct usage_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A numeric guard tripped, e.g. a removable singularity hit without a fallback.
struct numeric_guard_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite state during time stepping.
struct integration_failure : std::runtime_error {
  integration_failure(const std::string& what, double at_time)
      : std::runtime_error(what + " at t=" + std::to_string(at_time)), time(at_time) {}
  double time;
};

/// Rare-event estimator cannot make progress (tied scores, stagnation).
struct degeneracy_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace pipeflow
