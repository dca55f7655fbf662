#pragma once

#include <cstdint>
#include <string>

#include "seqlink/odesolve.hpp"
#include "seqlink/param_store.hpp"
#include "seqlink/tape.hpp"

namespace seqlink {

/// Learnable dynamics dh/dt = f(h): a single-hidden-layer tanh MLP over the
/// state, autonomous in time. Parameters live in the store under
/// `prefix/l0/{W,b}` and `prefix/l1/{W,b}` and are created on construction
/// when absent.
class MlpDynamics {
 public:
  MlpDynamics(ParameterStore& store, std::string prefix, std::size_t state_dim,
              std::size_t hidden_units, std::uint64_t seed);

  std::size_t state_dim() const { return state_dim_; }

  /// Plain evaluation against current parameter values.
  Array eval(const Array& h, double t) const;

  /// Same computation recorded on a tape.
  Tape::NodeId eval(Tape& t, Tape::NodeId h) const;

  DynamicsFn fn() const;
  TapeDynamicsFn tape_fn() const;

 private:
  ParameterStore* store_;
  std::string prefix_;
  std::size_t state_dim_;
  std::size_t hidden_units_;
};

}  // namespace seqlink
