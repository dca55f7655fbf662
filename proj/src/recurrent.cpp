#include "seqlink/recurrent.hpp"

#include <utility>

#include "seqlink/errors.hpp"

namespace seqlink {

GruCell::GruCell(ParameterStore& store, std::string prefix, std::size_t hidden,
                 std::size_t input, std::uint64_t seed)
    : store_(&store),
      prefix_(std::move(prefix)),
      hidden_(hidden),
      input_(input) {
  if (hidden_ == 0 || input_ == 0) {
    throw UsageError("GruCell: hidden and input widths must be positive");
  }
  for (const char* gate : {"update", "reset", "cand"}) {
    const std::string base = prefix_ + "/" + gate;
    if (!store_->contains(base + "/Wx")) {
      store_->define(base + "/Wx", init_weight(hidden_, input_, seed, base + "/Wx"));
    }
    if (!store_->contains(base + "/Wh")) {
      store_->define(base + "/Wh", init_weight(hidden_, hidden_, seed, base + "/Wh"));
    }
    if (!store_->contains(base + "/b")) {
      store_->define(base + "/b", Array::zeros({hidden_}));
    }
  }
}

Tape::NodeId GruCell::step(Tape& t, Tape::NodeId h, Tape::NodeId x) const {
  if (t.value(h).size() != hidden_) {
    throw ShapeError("GruCell::step: state has size " +
                     std::to_string(t.value(h).size()) + ", expected " +
                     std::to_string(hidden_));
  }
  if (t.value(x).size() != input_) {
    throw ShapeError("GruCell::step: input has size " +
                     std::to_string(t.value(x).size()) + ", expected " +
                     std::to_string(input_));
  }
  auto gate_pre = [&](const std::string& gate) {
    Tape::NodeId wx = t.param(*store_, prefix_ + "/" + gate + "/Wx");
    Tape::NodeId wh = t.param(*store_, prefix_ + "/" + gate + "/Wh");
    Tape::NodeId b = t.param(*store_, prefix_ + "/" + gate + "/b");
    return t.add(t.add(t.matvec(wx, x), t.matvec(wh, h)), b);
  };
  Tape::NodeId z = t.sigmoid(gate_pre("update"));
  Tape::NodeId r = t.sigmoid(gate_pre("reset"));

  Tape::NodeId cx = t.matvec(t.param(*store_, prefix_ + "/cand/Wx"), x);
  Tape::NodeId ch = t.matvec(t.param(*store_, prefix_ + "/cand/Wh"), h);
  Tape::NodeId cb = t.param(*store_, prefix_ + "/cand/b");
  Tape::NodeId c = t.tanh(t.add(t.add(cx, cb), t.mul(r, ch)));

  return t.add(t.mul(one_minus(t, z), c), t.mul(z, h));
}

Array GruCell::step_values(const Array& h, const Array& x) const {
  Tape t;
  return t.value(step(t, t.leaf(h), t.leaf(x)));
}

TaskKind task_from_string(const std::string& s) {
  if (s == "regression") return TaskKind::regression;
  if (s == "classification" || s == "binary_classification") {
    return TaskKind::binary_classification;
  }
  throw UsageError("unknown task '" + s + "' (regression | classification)");
}

std::string to_string(TaskKind task) {
  return task == TaskKind::regression ? "regression" : "classification";
}

OutputHead::OutputHead(ParameterStore& store, std::string prefix,
                       std::size_t out, std::size_t hidden, TaskKind task,
                       std::uint64_t seed)
    : store_(&store),
      prefix_(std::move(prefix)),
      out_(out),
      hidden_(hidden),
      task_(task) {
  if (out_ == 0 || hidden_ == 0) {
    throw UsageError("OutputHead: output and hidden widths must be positive");
  }
  define_linear(*store_, prefix_, out_, hidden_, seed);
}

Tape::NodeId OutputHead::predict(Tape& t, Tape::NodeId h) const {
  if (t.value(h).size() != hidden_) {
    throw ShapeError("OutputHead::predict: state has size " +
                     std::to_string(t.value(h).size()) + ", expected " +
                     std::to_string(hidden_));
  }
  Tape::NodeId y = affine_layer(t, *store_, prefix_, h);
  if (task_ == TaskKind::binary_classification) y = t.sigmoid(y);
  return y;
}

Array OutputHead::predict_values(const Array& h) const {
  Tape t;
  return t.value(predict(t, t.leaf(h)));
}

std::vector<Tape::NodeId> ode_rnn_forward(Tape& t,
                                          const TapeDynamicsFn& dynamics,
                                          const GruCell& cell,
                                          const TimeSeriesBatch& batch,
                                          std::size_t sample,
                                          const OdeRnnOptions& opts) {
  if (sample >= batch.samples()) {
    throw UsageError("ode_rnn_forward: sample index " + std::to_string(sample) +
                     " out of range for " + std::to_string(batch.samples()) +
                     " samples");
  }
  if (cell.input() != opts.context_pad + batch.features()) {
    throw ShapeError("ode_rnn_forward: cell input width " +
                     std::to_string(cell.input()) + " != context_pad + D = " +
                     std::to_string(opts.context_pad + batch.features()));
  }
  if (opts.method == SolveMethod::dopri5) {
    throw UsageError("ode_rnn_forward: recurrence uses fixed-step methods; "
                     "dopri5 is reserved for standalone solves");
  }
  const std::size_t n = batch.length();
  Tape::NodeId h = t.leaf(Array::zeros({cell.hidden()}));
  Tape::NodeId pad = 0;
  if (opts.context_pad > 0) pad = t.leaf(Array::zeros({opts.context_pad}));

  std::vector<Tape::NodeId> states;
  states.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) {
      h = integrate_fixed_on_tape(t, dynamics, h, batch.t.data()[i - 1],
                                  batch.t.data()[i], opts.substeps,
                                  opts.method);
    }
    if (batch.observed_at(sample, i)) {
      Tape::NodeId x = t.mul(t.leaf(batch.value_at(sample, i)),
                             t.leaf(batch.mask_at(sample, i)));
      if (opts.context_pad > 0) x = t.concat(pad, x);
      h = cell.step(t, h, x);
    }
    states.push_back(h);
  }
  return states;
}

}  // namespace seqlink
