#include "seqlink/tape.hpp"

#include <cmath>

namespace seqlink {

Tape::NodeId Tape::push(Node n, const char* name) {
  if (!n.value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by op '") + name + "'");
  }
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::check_exists(NodeId id) const {
  if (id >= nodes_.size()) throw UsageError("tape node id out of range");
}

Tape::NodeId Tape::leaf(Array value) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  return push(std::move(n), "leaf");
}

Tape::NodeId Tape::param(ParameterStore& store, const std::string& name) {
  auto it = param_nodes_.find(name);
  if (it != param_nodes_.end()) return it->second;
  Node n;
  n.op = Op::kParam;
  n.value = store.value(name);
  n.param_index = static_cast<std::int32_t>(params_.size());
  params_.push_back({&store, name});
  NodeId id = push(std::move(n), "param");
  param_nodes_.emplace(name, id);
  return id;
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  check_exists(a);
  check_exists(b);
  const Array& va = nodes_[a].value;
  const Array& vb = nodes_[b].value;
  if (!va.same_shape(vb)) {
    throw ShapeError("add: shape mismatch " + va.shape_str() + " vs " + vb.shape_str());
  }
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.value = Array(va.shape());
  for (std::size_t i = 0; i < va.size(); ++i) n.value[i] = va[i] + vb[i];
  return push(std::move(n), "add");
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
  check_exists(a);
  check_exists(b);
  const Array& va = nodes_[a].value;
  const Array& vb = nodes_[b].value;
  if (!va.same_shape(vb)) {
    throw ShapeError("sub: shape mismatch " + va.shape_str() + " vs " + vb.shape_str());
  }
  Node n;
  n.op = Op::kSub;
  n.a = a;
  n.b = b;
  n.value = Array(va.shape());
  for (std::size_t i = 0; i < va.size(); ++i) n.value[i] = va[i] - vb[i];
  return push(std::move(n), "sub");
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
  check_exists(a);
  check_exists(b);
  const Array& va = nodes_[a].value;
  const Array& vb = nodes_[b].value;
  if (!va.same_shape(vb)) {
    throw ShapeError("mul: shape mismatch " + va.shape_str() + " vs " + vb.shape_str());
  }
  Node n;
  n.op = Op::kMul;
  n.a = a;
  n.b = b;
  n.value = Array(va.shape());
  for (std::size_t i = 0; i < va.size(); ++i) n.value[i] = va[i] * vb[i];
  return push(std::move(n), "mul");
}

Tape::NodeId Tape::affine(NodeId a, double k, double c) {
  check_exists(a);
  const Array& va = nodes_[a].value;
  Node n;
  n.op = Op::kAffine;
  n.a = a;
  n.k = k;
  n.c = c;
  n.value = Array(va.shape());
  for (std::size_t i = 0; i < va.size(); ++i) n.value[i] = k * va[i] + c;
  return push(std::move(n), "affine");
}

Tape::NodeId Tape::matvec(NodeId w, NodeId x) {
  check_exists(w);
  check_exists(x);
  const Array& vw = nodes_[w].value;
  const Array& vx = nodes_[x].value;
  if (vw.rank() != 2 || vx.rank() != 1 || vw.cols() != vx.size()) {
    throw ShapeError("matvec: incompatible shapes " + vw.shape_str() + " and " +
                     vx.shape_str());
  }
  const std::size_t rows = vw.rows();
  const std::size_t cols = vw.cols();
  Node n;
  n.op = Op::kMatvec;
  n.a = w;
  n.b = x;
  n.value = Array({rows});
  const double* wp = vw.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    const double* row = wp + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * vx[c];
    n.value[r] = acc;
  }
  return push(std::move(n), "matvec");
}

Tape::NodeId Tape::smul(NodeId a, NodeId s) {
  check_exists(a);
  check_exists(s);
  const Array& va = nodes_[a].value;
  const Array& vs = nodes_[s].value;
  if (vs.size() != 1) {
    throw ShapeError("smul: scalar operand must have one element, got " + vs.shape_str());
  }
  Node n;
  n.op = Op::kSmul;
  n.a = a;
  n.b = s;
  n.value = Array(va.shape());
  for (std::size_t i = 0; i < va.size(); ++i) n.value[i] = va[i] * vs[0];
  return push(std::move(n), "smul");
}

Tape::NodeId Tape::pick(NodeId a, std::size_t index) {
  check_exists(a);
  const Array& va = nodes_[a].value;
  if (index >= va.size()) {
    throw ShapeError("pick: index " + std::to_string(index) + " out of range for " +
                     va.shape_str());
  }
  Node n;
  n.op = Op::kPick;
  n.a = a;
  n.k = double(index);
  n.value = Array::scalar(va[index]);
  return push(std::move(n), "pick");
}

Tape::NodeId Tape::tanh(NodeId a) {
  check_exists(a);
  const Array& va = nodes_[a].value;
  Node n;
  n.op = Op::kTanh;
  n.a = a;
  n.value = Array(va.shape());
  for (std::size_t i = 0; i < va.size(); ++i) n.value[i] = std::tanh(va[i]);
  return push(std::move(n), "tanh");
}

Tape::NodeId Tape::sigmoid(NodeId a) {
  check_exists(a);
  const Array& va = nodes_[a].value;
  Node n;
  n.op = Op::kSigmoid;
  n.a = a;
  n.value = Array(va.shape());
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double v = va[i];
    // Branch on sign to avoid exp overflow on large negatives.
    n.value[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                          : std::exp(v) / (1.0 + std::exp(v));
  }
  return push(std::move(n), "sigmoid");
}

Tape::NodeId Tape::log(NodeId a) {
  check_exists(a);
  const Array& va = nodes_[a].value;
  Node n;
  n.op = Op::kLog;
  n.a = a;
  n.value = Array(va.shape());
  for (std::size_t i = 0; i < va.size(); ++i) {
    if (va[i] <= 0.0) {
      throw NumericError("log of non-positive value " + std::to_string(va[i]));
    }
    n.value[i] = std::log(va[i]);
  }
  return push(std::move(n), "log");
}

Tape::NodeId Tape::softmax(NodeId a) {
  check_exists(a);
  const Array& va = nodes_[a].value;
  if (va.rank() != 1 || va.size() == 0) {
    throw ShapeError("softmax: expected nonempty rank-1 input, got " + va.shape_str());
  }
  Node n;
  n.op = Op::kSoftmax;
  n.a = a;
  n.value = Array(va.shape());
  double mx = va[0];
  for (std::size_t i = 1; i < va.size(); ++i) mx = std::max(mx, va[i]);
  double total = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    n.value[i] = std::exp(va[i] - mx);
    total += n.value[i];
  }
  for (std::size_t i = 0; i < va.size(); ++i) n.value[i] /= total;
  return push(std::move(n), "softmax");
}

Tape::NodeId Tape::concat(NodeId a, NodeId b) {
  check_exists(a);
  check_exists(b);
  const Array& va = nodes_[a].value;
  const Array& vb = nodes_[b].value;
  if (va.rank() != 1 || vb.rank() != 1) {
    throw ShapeError("concat: rank-1 operands required, got " + va.shape_str() + " and " +
                     vb.shape_str());
  }
  Node n;
  n.op = Op::kConcat;
  n.a = a;
  n.b = b;
  n.value = Array({va.size() + vb.size()});
  for (std::size_t i = 0; i < va.size(); ++i) n.value[i] = va[i];
  for (std::size_t i = 0; i < vb.size(); ++i) n.value[va.size() + i] = vb[i];
  return push(std::move(n), "concat");
}

Tape::NodeId Tape::sum(NodeId a) {
  check_exists(a);
  const Array& va = nodes_[a].value;
  Node n;
  n.op = Op::kSum;
  n.a = a;
  double acc = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) acc += va[i];
  n.value = Array::scalar(acc);
  return push(std::move(n), "sum");
}

Tape::NodeId Tape::mean(NodeId a) {
  check_exists(a);
  const Array& va = nodes_[a].value;
  if (va.size() == 0) throw ShapeError("mean of empty array");
  Node n;
  n.op = Op::kMean;
  n.a = a;
  double acc = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) acc += va[i];
  n.value = Array::scalar(acc / double(va.size()));
  return push(std::move(n), "mean");
}

void Tape::backward(NodeId seed) {
  if (nodes_.empty()) throw UsageError("backward called on an empty tape");
  check_exists(seed);
  if (nodes_[seed].value.size() != 1) {
    throw UsageError("backward seed must be a single-element node, got shape " +
                     nodes_[seed].value.shape_str());
  }
  grads_.assign(nodes_.size(), Array());
  for (std::size_t i = 0; i <= seed; ++i) grads_[i] = Array::zeros(nodes_[i].value.shape());
  grads_[seed][0] = 1.0;

  for (std::size_t idx = seed + 1; idx-- > 0;) {
    const Node& n = nodes_[idx];
    const Array& g = grads_[idx];
    switch (n.op) {
      case Op::kLeaf:
      case Op::kParam:
        break;
      case Op::kAdd: {
        Array& ga = grads_[n.a];
        Array& gb = grads_[n.b];
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i];
          gb[i] += g[i];
        }
        break;
      }
      case Op::kSub: {
        Array& ga = grads_[n.a];
        Array& gb = grads_[n.b];
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i];
          gb[i] -= g[i];
        }
        break;
      }
      case Op::kMul: {
        Array& ga = grads_[n.a];
        Array& gb = grads_[n.b];
        const Array& va = nodes_[n.a].value;
        const Array& vb = nodes_[n.b].value;
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * vb[i];
          gb[i] += g[i] * va[i];
        }
        break;
      }
      case Op::kAffine: {
        Array& ga = grads_[n.a];
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.k * g[i];
        break;
      }
      case Op::kMatvec: {
        Array& gw = grads_[n.a];
        Array& gx = grads_[n.b];
        const Array& vw = nodes_[n.a].value;
        const Array& vx = nodes_[n.b].value;
        const std::size_t rows = vw.rows();
        const std::size_t cols = vw.cols();
        for (std::size_t r = 0; r < rows; ++r) {
          const double gr = g[r];
          double* gwrow = gw.data() + r * cols;
          const double* wrow = vw.data() + r * cols;
          for (std::size_t c = 0; c < cols; ++c) {
            gwrow[c] += gr * vx[c];
            gx[c] += gr * wrow[c];
          }
        }
        break;
      }
      case Op::kSmul: {
        Array& ga = grads_[n.a];
        Array& gs = grads_[n.b];
        const Array& va = nodes_[n.a].value;
        const double s = nodes_[n.b].value[0];
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * s;
          dot += g[i] * va[i];
        }
        gs[0] += dot;
        break;
      }
      case Op::kPick: {
        grads_[n.a][std::size_t(n.k)] += g[0];
        break;
      }
      case Op::kTanh: {
        Array& ga = grads_[n.a];
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
        }
        break;
      }
      case Op::kSigmoid: {
        Array& ga = grads_[n.a];
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
        }
        break;
      }
      case Op::kLog: {
        Array& ga = grads_[n.a];
        const Array& va = nodes_[n.a].value;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / va[i];
        break;
      }
      case Op::kSoftmax: {
        Array& ga = grads_[n.a];
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * n.value[i];
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += n.value[i] * (g[i] - dot);
        }
        break;
      }
      case Op::kConcat: {
        Array& ga = grads_[n.a];
        Array& gb = grads_[n.b];
        const std::size_t na = ga.size();
        for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
        break;
      }
      case Op::kSum: {
        Array& ga = grads_[n.a];
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
        break;
      }
      case Op::kMean: {
        Array& ga = grads_[n.a];
        const double s = g[0] / double(ga.size());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s;
        break;
      }
    }
  }

  for (std::size_t i = 0; i <= seed; ++i) {
    const Node& n = nodes_[i];
    if (n.op == Op::kParam) {
      params_[n.param_index].store->accumulate_grad(params_[n.param_index].name, grads_[i]);
    }
  }
  ran_backward_ = true;
}

const Array& Tape::grad_of(NodeId id) const {
  if (!ran_backward_) throw UsageError("grad_of called before backward");
  check_exists(id);
  if (id >= grads_.size() || grads_[id].empty()) {
    throw UsageError("node was not part of the last backward sweep");
  }
  return grads_[id];
}

// ---- helpers ----------------------------------------------------------------

Tape::NodeId affine_layer(Tape& t, ParameterStore& store, const std::string& prefix,
                          Tape::NodeId x) {
  Tape::NodeId w = t.param(store, prefix + "/W");
  Tape::NodeId b = t.param(store, prefix + "/b");
  return t.add(t.matvec(w, x), b);
}

Tape::NodeId mse_loss(Tape& t, Tape::NodeId pred, const Array& target) {
  if (!t.value(pred).same_shape(target)) {
    throw ShapeError("mse: prediction " + t.value(pred).shape_str() + " vs target " +
                     target.shape_str());
  }
  Tape::NodeId diff = t.sub(pred, t.leaf(target));
  return t.mean(t.mul(diff, diff));
}

Tape::NodeId weighted_mse_loss(Tape& t, Tape::NodeId pred, const Array& target,
                               const Array& weights) {
  if (!t.value(pred).same_shape(target) || !t.value(pred).same_shape(weights)) {
    throw ShapeError("weighted mse: mismatched shapes");
  }
  double wsum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) wsum += weights[i];
  if (wsum <= 0.0) throw UsageError("weighted mse: all weights zero");
  Tape::NodeId diff = t.sub(pred, t.leaf(target));
  Tape::NodeId sq = t.mul(diff, diff);
  return t.affine(t.sum(t.mul(sq, t.leaf(weights))), 1.0 / wsum, 0.0);
}

Tape::NodeId bce_loss(Tape& t, Tape::NodeId prob, double label) {
  if (t.value(prob).size() != 1) {
    throw ShapeError("bce: probability must be a single element");
  }
  Tape::NodeId lp = t.log(prob);
  Tape::NodeId lq = t.log(one_minus(t, prob));
  Tape::NodeId term = t.add(t.affine(lp, label, 0.0), t.affine(lq, 1.0 - label, 0.0));
  return t.affine(term, -1.0, 0.0);
}

}  // namespace seqlink
