#pragma once

#include <functional>
#include <vector>

#include "seqlink/array.hpp"
#include "seqlink/tape.hpp"

namespace seqlink {

enum class SolveMethod { euler, rk4, dopri5 };

SolveMethod solve_method_from_string(const std::string& name);
std::string to_string(SolveMethod m);

/// dh/dt = f(h, t) evaluated on plain arrays (no tape).
using DynamicsFn = std::function<Array(const Array& h, double t)>;

/// Same dynamics expressed as tape ops, for differentiable solves.
/// A null function means frozen state (dh/dt = 0) and skips work entirely.
using TapeDynamicsFn = std::function<Tape::NodeId(Tape& t, Tape::NodeId h, double time)>;

struct SolveRequest {
  DynamicsFn dynamics;
  Array initial_state;
  std::vector<double> output_times;  // strictly ascending, first entry is t0
  SolveMethod method = SolveMethod::dopri5;
  double rtol = 1e-3;
  double atol = 1e-4;
  int max_steps = 100000;
  int substeps = 4;  // fixed-step methods: steps per requested interval
};

struct StepRecord {
  double t;
  double h;
  bool accepted;
};

struct SolveResult {
  /// states[i] is the state at output_times[i]; states[0] equals the
  /// initial state exactly. Shape [n_times, H].
  Array states;
  /// dopri5 only: accepted/rejected step sizes in order.
  std::vector<StepRecord> step_log;
};

/// Integrate the requested time grid. Requested times are hit exactly;
/// dopri5 clamps its step to each boundary rather than interpolating.
SolveResult solve(const SolveRequest& req);

/// Fixed-step integration from ta to tb (either direction) with `steps`
/// equal steps. The building block behind the fixed-step solve() paths.
Array integrate_fixed(const DynamicsFn& dynamics, Array h, double ta, double tb,
                      int steps, SolveMethod method);

/// Differentiable fixed-step integration recorded on the tape. Only euler
/// and rk4 are supported here; the adaptive method stays off-tape.
Tape::NodeId integrate_fixed_on_tape(Tape& t, const TapeDynamicsFn& dynamics,
                                     Tape::NodeId h, double ta, double tb, int steps,
                                     SolveMethod method);

/// A test problem with a known solution, for order measurement.
struct OrderProblem {
  DynamicsFn dynamics;
  Array h0;
  double t0;
  double t1;
  std::function<Array(double t)> exact;
};

/// Empirical convergence order: least-squares slope of log(global error at
/// t1) against log(step size) over `step_counts` (>= 4 sizes). Returns
/// +infinity when every error is at round-off level.
double convergence_order(SolveMethod method, const OrderProblem& problem,
                         const std::vector<int>& step_counts = {16, 32, 64, 128});

}  // namespace seqlink
