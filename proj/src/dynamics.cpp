#include "seqlink/dynamics.hpp"

#include <cmath>
#include <utility>

namespace seqlink {

MlpDynamics::MlpDynamics(ParameterStore& store, std::string prefix,
                         std::size_t state_dim, std::size_t hidden_units,
                         std::uint64_t seed)
    : store_(&store),
      prefix_(std::move(prefix)),
      state_dim_(state_dim),
      hidden_units_(hidden_units) {
  if (state_dim_ == 0 || hidden_units_ == 0) {
    throw UsageError("MlpDynamics: state_dim and hidden_units must be positive");
  }
  define_linear(*store_, prefix_ + "/l0", hidden_units_, state_dim_, seed);
  define_linear(*store_, prefix_ + "/l1", state_dim_, hidden_units_, seed);
}

Array MlpDynamics::eval(const Array& h, double /*t*/) const {
  if (h.size() != state_dim_) {
    throw ShapeError("MlpDynamics::eval: state has size " +
                     std::to_string(h.size()) + ", expected " +
                     std::to_string(state_dim_));
  }
  const Array& w0 = store_->value(prefix_ + "/l0/W");
  const Array& b0 = store_->value(prefix_ + "/l0/b");
  const Array& w1 = store_->value(prefix_ + "/l1/W");
  const Array& b1 = store_->value(prefix_ + "/l1/b");

  // Accumulation order matches the tape path (matvec sum, then bias) so both
  // evaluations agree bit for bit.
  Array hidden = Array::zeros({hidden_units_});
  for (std::size_t i = 0; i < hidden_units_; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < state_dim_; ++j) {
      acc += w0.at(i, j) * h.data()[j];
    }
    hidden.data()[i] = std::tanh(acc + b0.data()[i]);
  }
  Array out = Array::zeros({state_dim_});
  for (std::size_t i = 0; i < state_dim_; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < hidden_units_; ++j) {
      acc += w1.at(i, j) * hidden.data()[j];
    }
    out.data()[i] = acc + b1.data()[i];
  }
  return out;
}

Tape::NodeId MlpDynamics::eval(Tape& t, Tape::NodeId h) const {
  Tape::NodeId pre = affine_layer(t, *store_, prefix_ + "/l0", h);
  Tape::NodeId hidden = t.tanh(pre);
  return affine_layer(t, *store_, prefix_ + "/l1", hidden);
}

DynamicsFn MlpDynamics::fn() const {
  // Copy `this` members by value so the closure outlives the object.
  const MlpDynamics self = *this;
  return [self](const Array& h, double t) { return self.eval(h, t); };
}

TapeDynamicsFn MlpDynamics::tape_fn() const {
  const MlpDynamics self = *this;
  return [self](Tape& t, Tape::NodeId h, double /*time*/) {
    return self.eval(t, h);
  };
}

}  // namespace seqlink
