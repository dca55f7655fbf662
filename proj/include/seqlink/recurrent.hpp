#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqlink/batch.hpp"
#include "seqlink/odesolve.hpp"
#include "seqlink/param_store.hpp"
#include "seqlink/tape.hpp"

namespace seqlink {

/// Gated recurrent cell mapping (h: [H], x: [D_in]) -> h': [H].
///
///   z  = sigmoid(Wx_z x + Wh_z h + b_z)          update gate
///   r  = sigmoid(Wx_r x + Wh_r h + b_r)          reset gate
///   c  = tanh(Wx_c x + b_c + r * (Wh_c h))       candidate
///   h' = (1 - z) * c + z * h
///
/// z saturated at 1 carries the old state through unchanged; with all
/// parameters zero and h = 0 the update is the zero fixed point.
class GruCell {
 public:
  GruCell(ParameterStore& store, std::string prefix, std::size_t hidden,
          std::size_t input, std::uint64_t seed);

  std::size_t hidden() const { return hidden_; }
  std::size_t input() const { return input_; }
  const std::string& prefix() const { return prefix_; }

  Tape::NodeId step(Tape& t, Tape::NodeId h, Tape::NodeId x) const;

  /// Convenience evaluation on a throwaway tape (same arithmetic).
  Array step_values(const Array& h, const Array& x) const;

 private:
  ParameterStore* store_;
  std::string prefix_;
  std::size_t hidden_;
  std::size_t input_;
};

/// Affine readout from a hidden state; classification passes the result
/// through a sigmoid so outputs live in (0,1).
enum class TaskKind { regression, binary_classification };

TaskKind task_from_string(const std::string& s);
std::string to_string(TaskKind task);

class OutputHead {
 public:
  OutputHead(ParameterStore& store, std::string prefix, std::size_t out,
             std::size_t hidden, TaskKind task, std::uint64_t seed);

  TaskKind task() const { return task_; }
  std::size_t out() const { return out_; }

  Tape::NodeId predict(Tape& t, Tape::NodeId h) const;
  Array predict_values(const Array& h) const;

 private:
  ParameterStore* store_;
  std::string prefix_;
  std::size_t out_;
  std::size_t hidden_;
  TaskKind task_;
};

struct OdeRnnOptions {
  SolveMethod method = SolveMethod::rk4;
  int substeps = 4;  // fixed substeps per inter-observation interval
  // Width of a zero block prepended to the cell input before the (masked)
  // values; lets a context-widened cell reproduce the plain recursion when the
  // context is absent.
  std::size_t context_pad = 0;
};

/// Hidden-state recursion over one sample of `batch`, recorded on `t`:
/// starting from h_0 = 0 at the first grid time, the state is evolved with
/// `dynamics` across each interval and updated by `cell` at time points where
/// the sample has at least one observed feature. The cell consumes
/// concat(zeros, x_i * m_i) so unobserved entries cannot reach the state. A
/// null `dynamics` freezes the state between observations (plain recurrent
/// baseline). Returns one state node per grid index.
std::vector<Tape::NodeId> ode_rnn_forward(Tape& t,
                                          const TapeDynamicsFn& dynamics,
                                          const GruCell& cell,
                                          const TimeSeriesBatch& batch,
                                          std::size_t sample,
                                          const OdeRnnOptions& opts = {});

}  // namespace seqlink
