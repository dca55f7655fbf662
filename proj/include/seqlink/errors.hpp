#pragma once

#include <stdexcept>
#include <string>

namespace seqlink {

/// Base class for every error this library raises on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Incompatible array shapes fed to an operation.
struct ShapeError : Error {
  using Error::Error;
};

/// A computation produced a non-finite value.
struct NumericError : Error {
  using Error::Error;
};

/// Caller violated a documented precondition.
struct UsageError : Error {
  using Error::Error;
};

/// Malformed input file (CSV, JSON artifact, checkpoint).
struct ParseError : Error {
  using Error::Error;
};

/// Adaptive solver ran out of steps before reaching the requested time.
struct NonConvergenceError : Error {
  NonConvergenceError(const std::string& msg, double reached)
      : Error(msg), t_reached(reached) {}
  double t_reached;
};

/// Solver state left the finite range.
struct DivergenceError : Error {
  DivergenceError(const std::string& msg, double reached)
      : Error(msg), t_reached(reached) {}
  double t_reached;
};

}  // namespace seqlink
