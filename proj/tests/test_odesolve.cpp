#include <cmath>
#include <vector>

#include "doctest.h"
#include "seqlink/dynamics.hpp"
#include "seqlink/odesolve.hpp"
#include "seqlink/param_store.hpp"
#include "seqlink/rng.hpp"
#include "seqlink/tape.hpp"
#include "support/fd_check.hpp"

using namespace seqlink;

namespace {

const DynamicsFn kDecay = [](const Array& h, double) {
  Array out = h;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = -h[i];
  return out;
};

// dh/dt = (h2, -h1): circular motion with period 2*pi.
const DynamicsFn kOscillator = [](const Array& h, double) {
  return Array({2}, {h[1], -h[0]});
};

double final_decay_error(double tol) {
  SolveRequest req;
  req.dynamics = kDecay;
  req.initial_state = Array({1}, {1.0});
  req.output_times = {0.0, 1.0};
  req.method = SolveMethod::dopri5;
  req.rtol = tol;
  req.atol = tol;
  const SolveResult res = solve(req);
  return std::fabs(res.states.at(1, 0) - std::exp(-1.0));
}

}  // namespace

TEST_SUITE("odesolve") {

TEST_CASE("zero dynamics keeps the state constant for every method") {
  for (SolveMethod method :
       {SolveMethod::euler, SolveMethod::rk4, SolveMethod::dopri5}) {
    SolveRequest req;
    req.dynamics = [](const Array& h, double) { return Array::zeros(h.shape()); };
    req.initial_state = Array({1}, {5.0});
    req.output_times = {0.0, 1.0};
    req.method = method;
    const SolveResult res = solve(req);
    CHECK(res.states.at(0, 0) == 5.0);
    CHECK(res.states.at(1, 0) == 5.0);
  }
}

TEST_CASE("dopri5 hits the exponential decay solution at tight tolerance") {
  SolveRequest req;
  req.dynamics = kDecay;
  req.initial_state = Array({1}, {1.0});
  req.output_times = {0.0, 1.0};
  req.method = SolveMethod::dopri5;
  req.rtol = 1e-8;
  req.atol = 1e-8;
  const SolveResult res = solve(req);
  CHECK(res.states.at(0, 0) == 1.0);
  CHECK(std::fabs(res.states.at(1, 0) - std::exp(-1.0)) < 1e-7);
  CHECK(!res.step_log.empty());
}

TEST_CASE("harmonic oscillator returns to its start after one period") {
  SolveRequest req;
  req.dynamics = kOscillator;
  req.initial_state = Array({2}, {0.0, 1.0});
  req.output_times = {0.0, 2.0 * std::acos(-1.0)};
  req.method = SolveMethod::dopri5;
  req.rtol = 1e-9;
  req.atol = 1e-9;
  const SolveResult res = solve(req);
  CHECK(std::fabs(res.states.at(1, 0) - 0.0) < 1e-6);
  CHECK(std::fabs(res.states.at(1, 1) - 1.0) < 1e-6);
}

TEST_CASE("intermediate output times match the closed form") {
  SolveRequest req;
  req.dynamics = kDecay;
  req.initial_state = Array({1}, {1.0});
  req.output_times = {0.0, 0.3, 0.7, 1.0};
  req.method = SolveMethod::dopri5;
  req.rtol = 1e-8;
  req.atol = 1e-8;
  const SolveResult res = solve(req);
  for (std::size_t i = 0; i < req.output_times.size(); ++i) {
    CHECK(std::fabs(res.states.at(i, 0) - std::exp(-req.output_times[i])) < 1e-7);
  }
}

TEST_CASE("measured convergence orders match the textbook values") {
  OrderProblem problem;
  problem.dynamics = kDecay;
  problem.h0 = Array({1}, {1.0});
  problem.t0 = 0.0;
  problem.t1 = 1.0;
  problem.exact = [](double t) { return Array({1}, {std::exp(-t)}); };

  const double euler_order = convergence_order(SolveMethod::euler, problem);
  CHECK(euler_order > 0.9);
  CHECK(euler_order < 1.1);

  const double rk4_order = convergence_order(SolveMethod::rk4, problem);
  CHECK(rk4_order > 3.8);
  CHECK(rk4_order < 4.2);
}

TEST_CASE("rk4 on zero dynamics is exact at every step size") {
  for (int steps : {1, 3, 16, 101}) {
    Array h = integrate_fixed(
        [](const Array& s, double) { return Array::zeros(s.shape()); },
        Array({2}, {1.25, -7.5}), 0.0, 3.0, steps, SolveMethod::rk4);
    CHECK(h[0] == 1.25);
    CHECK(h[1] == -7.5);
  }
}

TEST_CASE("tightening dopri5 tolerances never increases the final error") {
  double prev = final_decay_error(1e-2);
  for (double tol : {1e-3, 1e-4, 1e-5, 1e-6}) {
    const double cur = final_decay_error(tol);
    CHECK(cur <= prev + 1e-15);
    prev = cur;
  }
}

TEST_CASE("gradient of a fixed-step solve matches finite differences") {
  ParameterStore store;
  Rng rng(substream(41, "solve-grad"));
  Array h0({3});
  for (std::size_t i = 0; i < h0.size(); ++i) h0[i] = rng.gaussian();
  store.define("h0", h0);
  MlpDynamics dyn(store, "dyn", 3, 5, 17);

  auto run = [&](bool want_grad) {
    Tape t;
    Tape::NodeId h = t.param(store, "h0");
    Tape::NodeId end =
        integrate_fixed_on_tape(t, dyn.tape_fn(), h, 0.0, 0.8, 4, SolveMethod::rk4);
    Tape::NodeId loss = t.sum(t.mul(end, end));
    if (want_grad) t.backward(loss);
    return t.value(loss)[0];
  };
  auto rep = testsupport::fd_check(
      store, [&] { return run(false); }, [&] { run(true); });
  INFO("worst ", rep.worst, " analytic=", rep.analytic, " numeric=", rep.numeric);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("euler fixed-step gradients also check out") {
  ParameterStore store;
  store.define("h0", Array({2}, {0.4, -0.2}));
  MlpDynamics dyn(store, "dyn", 2, 4, 19);
  auto run = [&](bool want_grad) {
    Tape t;
    Tape::NodeId end = integrate_fixed_on_tape(t, dyn.tape_fn(), t.param(store, "h0"),
                                               0.0, 0.5, 6, SolveMethod::euler);
    Tape::NodeId loss = t.mean(t.mul(end, end));
    if (want_grad) t.backward(loss);
    return t.value(loss)[0];
  };
  auto rep = testsupport::fd_check(
      store, [&] { return run(false); }, [&] { run(true); });
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("rk4 forward then backward in time recovers the start") {
  ParameterStore store;
  MlpDynamics dyn(store, "dyn", 3, 6, 23);
  Rng rng(substream(43, "reverse"));
  Array h0({3});
  for (std::size_t i = 0; i < h0.size(); ++i) h0[i] = rng.gaussian();

  const Array mid = integrate_fixed(dyn.fn(), h0, 0.0, 1.0, 64, SolveMethod::rk4);
  const Array back = integrate_fixed(dyn.fn(), mid, 1.0, 0.0, 64, SolveMethod::rk4);
  for (std::size_t i = 0; i < h0.size(); ++i) {
    CHECK(std::fabs(back[i] - h0[i]) < 1e-6);
  }
}

TEST_CASE("mlp dynamics evaluates identically on and off the tape") {
  ParameterStore store;
  MlpDynamics dyn(store, "dyn", 4, 7, 29);
  Rng rng(substream(47, "dyn-bitwise"));
  for (int trial = 0; trial < 10; ++trial) {
    Array h({4});
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = 2.0 * rng.gaussian();
    Tape t;
    const Array on_tape = t.value(dyn.eval(t, t.leaf(h)));
    CHECK(dyn.eval(h, 0.0) == on_tape);
  }
}

TEST_CASE("request validation and failure modes") {
  SolveRequest req;
  req.dynamics = kDecay;
  req.initial_state = Array({1}, {1.0});
  req.output_times = {0.0, -1.0};
  CHECK_THROWS_AS(solve(req), UsageError);  // descending times

  req.output_times = {0.0, 1.0};
  req.rtol = 0.0;
  req.method = SolveMethod::dopri5;
  CHECK_THROWS_AS(solve(req), UsageError);  // non-positive tolerance

  SolveRequest capped;
  capped.dynamics = kDecay;
  capped.initial_state = Array({1}, {1.0});
  capped.output_times = {0.0, 1.0};
  capped.method = SolveMethod::dopri5;
  capped.rtol = 1e-13;
  capped.atol = 1e-13;
  capped.max_steps = 3;
  try {
    solve(capped);
    FAIL("expected NonConvergenceError");
  } catch (const NonConvergenceError& e) {
    CHECK(e.t_reached >= 0.0);
    CHECK(e.t_reached < 1.0);
  }

  SolveRequest blowup;
  blowup.dynamics = [](const Array& h, double) {
    Array out = h;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = h[i] * h[i] * 1e4;
    return out;
  };
  blowup.initial_state = Array({1}, {10.0});
  blowup.output_times = {0.0, 5.0};
  blowup.method = SolveMethod::euler;
  blowup.substeps = 20;
  CHECK_THROWS_AS(solve(blowup), DivergenceError);

  Tape t;
  CHECK_THROWS_AS(integrate_fixed_on_tape(t, TapeDynamicsFn{}, t.leaf(Array::scalar(1.0)),
                                          0.0, 1.0, 4, SolveMethod::dopri5),
                  UsageError);
}

TEST_CASE("null tape dynamics freezes the state without recording work") {
  Tape t;
  Tape::NodeId h = t.leaf(Array({2}, {3.0, -4.0}));
  Tape::NodeId out =
      integrate_fixed_on_tape(t, TapeDynamicsFn{}, h, 0.0, 2.0, 4, SolveMethod::rk4);
  CHECK(out == h);
}

}  // TEST_SUITE
