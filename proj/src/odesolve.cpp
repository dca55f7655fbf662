#include "seqlink/odesolve.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace seqlink {

SolveMethod solve_method_from_string(const std::string& name) {
  if (name == "euler") return SolveMethod::euler;
  if (name == "rk4") return SolveMethod::rk4;
  if (name == "dopri5") return SolveMethod::dopri5;
  throw UsageError("unknown solver method '" + name + "'");
}

std::string to_string(SolveMethod m) {
  switch (m) {
    case SolveMethod::euler: return "euler";
    case SolveMethod::rk4: return "rk4";
    case SolveMethod::dopri5: return "dopri5";
  }
  return "?";
}

namespace {

void check_finite_state(const Array& h, double t) {
  if (!h.all_finite()) {
    throw DivergenceError("solver state became non-finite at t=" + std::to_string(t), t);
  }
}

Array axpy(const Array& y, double a, const Array& x) {
  Array out(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] + a * x[i];
  return out;
}

Array euler_step(const DynamicsFn& f, const Array& h, double t, double dt) {
  return axpy(h, dt, f(h, t));
}

Array rk4_step(const DynamicsFn& f, const Array& h, double t, double dt) {
  Array k1 = f(h, t);
  Array k2 = f(axpy(h, dt / 2.0, k1), t + dt / 2.0);
  Array k3 = f(axpy(h, dt / 2.0, k2), t + dt / 2.0);
  Array k4 = f(axpy(h, dt, k3), t + dt);
  Array out(h.shape());
  for (std::size_t i = 0; i < h.size(); ++i) {
    out[i] = h[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }
  return out;
}

// Dormand-Prince 5(4) tableau.
constexpr double kA21 = 1.0 / 5.0;
constexpr double kA31 = 3.0 / 40.0, kA32 = 9.0 / 40.0;
constexpr double kA41 = 44.0 / 45.0, kA42 = -56.0 / 15.0, kA43 = 32.0 / 9.0;
constexpr double kA51 = 19372.0 / 6561.0, kA52 = -25360.0 / 2187.0,
                 kA53 = 64448.0 / 6561.0, kA54 = -212.0 / 729.0;
constexpr double kA61 = 9017.0 / 3168.0, kA62 = -355.0 / 33.0, kA63 = 46732.0 / 5247.0,
                 kA64 = 49.0 / 176.0, kA65 = -5103.0 / 18656.0;
constexpr double kB1 = 35.0 / 384.0, kB3 = 500.0 / 1113.0, kB4 = 125.0 / 192.0,
                 kB5 = -2187.0 / 6784.0, kB6 = 11.0 / 84.0;
constexpr double kE1 = 35.0 / 384.0 - 5179.0 / 57600.0;
constexpr double kE3 = 500.0 / 1113.0 - 7571.0 / 16695.0;
constexpr double kE4 = 125.0 / 192.0 - 393.0 / 640.0;
constexpr double kE5 = -2187.0 / 6784.0 + 92097.0 / 339200.0;
constexpr double kE6 = 11.0 / 84.0 - 187.0 / 2100.0;
constexpr double kE7 = -1.0 / 40.0;
constexpr double kC2 = 1.0 / 5.0, kC3 = 3.0 / 10.0, kC4 = 4.0 / 5.0, kC5 = 8.0 / 9.0;

struct Dopri5Step {
  Array y_new;
  Array f_new;  // FSAL: derivative at y_new
  double error_norm;
};

Dopri5Step dopri5_attempt(const DynamicsFn& f, const Array& y, const Array& f0, double t,
                          double dt, double rtol, double atol) {
  const std::size_t n = y.size();
  Array k1 = f0;
  Array y2(y.shape());
  for (std::size_t i = 0; i < n; ++i) y2[i] = y[i] + dt * kA21 * k1[i];
  Array k2 = f(y2, t + kC2 * dt);
  Array y3(y.shape());
  for (std::size_t i = 0; i < n; ++i) y3[i] = y[i] + dt * (kA31 * k1[i] + kA32 * k2[i]);
  Array k3 = f(y3, t + kC3 * dt);
  Array y4(y.shape());
  for (std::size_t i = 0; i < n; ++i) {
    y4[i] = y[i] + dt * (kA41 * k1[i] + kA42 * k2[i] + kA43 * k3[i]);
  }
  Array k4 = f(y4, t + kC4 * dt);
  Array y5(y.shape());
  for (std::size_t i = 0; i < n; ++i) {
    y5[i] = y[i] + dt * (kA51 * k1[i] + kA52 * k2[i] + kA53 * k3[i] + kA54 * k4[i]);
  }
  Array k5 = f(y5, t + kC5 * dt);
  Array y6(y.shape());
  for (std::size_t i = 0; i < n; ++i) {
    y6[i] = y[i] + dt * (kA61 * k1[i] + kA62 * k2[i] + kA63 * k3[i] + kA64 * k4[i] +
                         kA65 * k5[i]);
  }
  Array k6 = f(y6, t + dt);

  Dopri5Step out;
  out.y_new = Array(y.shape());
  for (std::size_t i = 0; i < n; ++i) {
    out.y_new[i] = y[i] + dt * (kB1 * k1[i] + kB3 * k3[i] + kB4 * k4[i] + kB5 * k5[i] +
                                kB6 * k6[i]);
  }
  out.f_new = f(out.y_new, t + dt);

  // Mixed-norm error: RMS of component error over (atol + rtol * |state|).
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double err = dt * (kE1 * k1[i] + kE3 * k3[i] + kE4 * k4[i] + kE5 * k5[i] +
                             kE6 * k6[i] + kE7 * out.f_new[i]);
    const double scale = atol + rtol * std::max(std::abs(y[i]), std::abs(out.y_new[i]));
    const double r = err / scale;
    acc += r * r;
  }
  out.error_norm = std::sqrt(acc / double(n));
  return out;
}

double scaled_norm(const Array& v, const Array& ref, double rtol, double atol) {
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double scale = atol + rtol * std::abs(ref[i]);
    const double r = v[i] / scale;
    acc += r * r;
  }
  return std::sqrt(acc / double(v.size()));
}

/// Classic initial step-size heuristic (Hairer/Norsett/Wanner I.4).
double initial_step(const DynamicsFn& f, const Array& y0, const Array& f0, double t0,
                    double t_end, double rtol, double atol) {
  const double d0 = scaled_norm(y0, y0, rtol, atol);
  const double d1 = scaled_norm(f0, y0, rtol, atol);
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, t_end - t0);
  Array y1 = axpy(y0, h0, f0);
  Array f1 = f(y1, t0 + h0);
  Array df(f0.shape());
  for (std::size_t i = 0; i < f0.size(); ++i) df[i] = f1[i] - f0[i];
  const double d2 = scaled_norm(df, y0, rtol, atol) / h0;
  double h1;
  if (std::max(d1, d2) <= 1e-15) {
    h1 = std::max(1e-6, h0 * 1e-3);
  } else {
    h1 = std::pow(0.01 / std::max(d1, d2), 1.0 / 5.0);
  }
  return std::min({100.0 * h0, h1, t_end - t0});
}

}  // namespace

Array integrate_fixed(const DynamicsFn& dynamics, Array h, double ta, double tb,
                      int steps, SolveMethod method) {
  if (steps < 1) throw UsageError("integrate_fixed: steps must be >= 1");
  if (method == SolveMethod::dopri5) {
    throw UsageError("integrate_fixed: fixed-step methods only");
  }
  if (!dynamics || ta == tb) return h;
  const double dt = (tb - ta) / double(steps);
  double t = ta;
  for (int s = 0; s < steps; ++s) {
    h = method == SolveMethod::euler ? euler_step(dynamics, h, t, dt)
                                     : rk4_step(dynamics, h, t, dt);
    t = ta + double(s + 1) * dt;
    check_finite_state(h, t);
  }
  return h;
}

SolveResult solve(const SolveRequest& req) {
  const auto& times = req.output_times;
  if (times.empty()) throw UsageError("solve: output_times must be nonempty");
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) {
      throw UsageError("solve: output_times must be strictly ascending");
    }
  }
  if (req.method == SolveMethod::dopri5 && (req.rtol <= 0.0 || req.atol <= 0.0)) {
    throw UsageError("solve: rtol and atol must be positive");
  }
  if (req.max_steps < 1) throw UsageError("solve: max_steps must be positive");

  const std::size_t dim = req.initial_state.size();
  SolveResult result;
  result.states = Array({times.size(), dim});
  for (std::size_t i = 0; i < dim; ++i) result.states.at(0, i) = req.initial_state[i];

  Array h = req.initial_state;

  if (req.method != SolveMethod::dopri5) {
    for (std::size_t seg = 1; seg < times.size(); ++seg) {
      h = integrate_fixed(req.dynamics, std::move(h), times[seg - 1], times[seg],
                          req.substeps, req.method);
      for (std::size_t i = 0; i < dim; ++i) result.states.at(seg, i) = h[i];
    }
    return result;
  }

  // Adaptive path. Step size carries over across segment boundaries but is
  // clamped so every requested time is hit exactly.
  int steps_used = 0;
  double t = times[0];
  Array fh = req.dynamics(h, t);
  check_finite_state(fh, t);
  double dt = initial_step(req.dynamics, h, fh, t, times.back(), req.rtol, req.atol);

  for (std::size_t seg = 1; seg < times.size(); ++seg) {
    const double t_target = times[seg];
    while (t < t_target) {
      if (steps_used >= req.max_steps) {
        throw NonConvergenceError(
            "dopri5 exceeded max_steps=" + std::to_string(req.max_steps) + " at t=" +
                std::to_string(t),
            t);
      }
      const double dt_try = std::min(dt, t_target - t);
      Dopri5Step step = dopri5_attempt(req.dynamics, h, fh, t, dt_try, req.rtol, req.atol);
      ++steps_used;
      if (!step.y_new.all_finite() || !std::isfinite(step.error_norm)) {
        throw DivergenceError("dopri5 state became non-finite at t=" + std::to_string(t), t);
      }
      const bool accept = step.error_norm <= 1.0;
      result.step_log.push_back({t, dt_try, accept});
      double factor = 0.9 * std::pow(std::max(step.error_norm, 1e-16), -0.2);
      factor = std::clamp(factor, 0.2, 5.0);
      if (accept) {
        t += dt_try;
        h = std::move(step.y_new);
        fh = std::move(step.f_new);
        dt = dt_try * factor;
      } else {
        dt = dt_try * std::min(factor, 1.0);
      }
    }
    for (std::size_t i = 0; i < dim; ++i) result.states.at(seg, i) = h[i];
  }
  return result;
}

Tape::NodeId integrate_fixed_on_tape(Tape& t, const TapeDynamicsFn& dynamics,
                                     Tape::NodeId h, double ta, double tb, int steps,
                                     SolveMethod method) {
  if (steps < 1) throw UsageError("integrate_fixed_on_tape: steps must be >= 1");
  if (method == SolveMethod::dopri5) {
    throw UsageError("integrate_fixed_on_tape: fixed-step methods only");
  }
  if (!dynamics || ta == tb) return h;
  const double dt = (tb - ta) / double(steps);
  double time = ta;
  for (int s = 0; s < steps; ++s) {
    if (method == SolveMethod::euler) {
      Tape::NodeId k1 = dynamics(t, h, time);
      h = t.add(h, t.affine(k1, dt, 0.0));
    } else {
      Tape::NodeId k1 = dynamics(t, h, time);
      Tape::NodeId k2 = dynamics(t, t.add(h, t.affine(k1, dt / 2.0, 0.0)), time + dt / 2.0);
      Tape::NodeId k3 = dynamics(t, t.add(h, t.affine(k2, dt / 2.0, 0.0)), time + dt / 2.0);
      Tape::NodeId k4 = dynamics(t, t.add(h, t.affine(k3, dt, 0.0)), time + dt);
      Tape::NodeId sum = t.add(t.add(k1, k4), t.affine(t.add(k2, k3), 2.0, 0.0));
      h = t.add(h, t.affine(sum, dt / 6.0, 0.0));
    }
    time = ta + double(s + 1) * dt;
  }
  return h;
}

double convergence_order(SolveMethod method, const OrderProblem& problem,
                         const std::vector<int>& step_counts) {
  if (step_counts.size() < 4) {
    throw UsageError("convergence_order: need at least 4 step sizes");
  }
  std::vector<double> log_h, log_err;
  for (int steps : step_counts) {
    Array end = integrate_fixed(problem.dynamics, problem.h0, problem.t0, problem.t1,
                                steps, method);
    Array exact = problem.exact(problem.t1);
    double err = 0.0;
    for (std::size_t i = 0; i < end.size(); ++i) {
      err = std::max(err, std::abs(end[i] - exact[i]));
    }
    if (err < 1e-15) continue;  // at round-off, uninformative for the fit
    log_h.push_back(std::log((problem.t1 - problem.t0) / double(steps)));
    log_err.push_back(std::log(err));
  }
  if (log_h.size() < 2) return std::numeric_limits<double>::infinity();
  // Least-squares slope.
  const double n = double(log_h.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < log_h.size(); ++i) {
    sx += log_h[i];
    sy += log_err[i];
    sxx += log_h[i] * log_h[i];
    sxy += log_h[i] * log_err[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace seqlink
