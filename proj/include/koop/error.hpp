#pragma once

#include <stdexcept>
#include <string>

namespace koop {

/// Shape or configuration mismatch detected when building a computation.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// API misuse (backward before forward, wrong model kind, ...).
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Malformed or truncated file, or an I/O failure.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// NaN/Inf encountered in a loss, gradient or simulation state.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Broken internal invariant (e.g. a negative ICNN-constrained weight).
struct InvariantError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace koop
