#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "seqlink/array.hpp"
#include "seqlink/param_store.hpp"

namespace seqlink {

/// Reverse-mode autodiff over an eagerly evaluated op tape.
///
/// Building a node IS the forward pass: every factory method computes the
/// value immediately and records the primitive. backward(seed) walks the
/// record in reverse and accumulates d(seed)/d(param) into the bound
/// ParameterStore. Node ids are indices into the tape, so inputs always
/// precede outputs and the reverse walk is exact reverse topological order.
class Tape {
 public:
  using NodeId = std::uint32_t;

  /// Constant/input leaf. Participates in the backward pass (its gradient is
  /// queryable) but flushes nowhere.
  NodeId leaf(Array value);

  /// Parameter leaf bound to `store[name]`. Memoized per tape: repeated calls
  /// return the same node, so reuse across time steps shares one leaf.
  NodeId param(ParameterStore& store, const std::string& name);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  /// k * a + c, with scalar constants k and c.
  NodeId affine(NodeId a, double k, double c);
  /// W [M,N] times x [N] -> [M].
  NodeId matvec(NodeId w, NodeId x);
  /// Elementwise a * s where s is a single-element node.
  NodeId smul(NodeId a, NodeId s);
  /// Single element a[index] as a [1] node.
  NodeId pick(NodeId a, std::size_t index);
  NodeId tanh(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId log(NodeId a);
  /// Stable softmax over a rank-1 node.
  NodeId softmax(NodeId a);
  NodeId concat(NodeId a, NodeId b);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);

  const Array& value(NodeId id) const { return nodes_[id].value; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Reverse sweep from a single-element seed node; gradient of the seed
  /// w.r.t. every parameter leaf is ADDED to the store accumulators (calling
  /// twice accumulates twice). Internal per-node gradients are recomputed
  /// from scratch on each call.
  void backward(NodeId seed);

  /// Gradient of the last backward() seed w.r.t. any node (leaf or interior).
  const Array& grad_of(NodeId id) const;

 private:
  enum class Op : std::uint8_t {
    kLeaf, kParam, kAdd, kSub, kMul, kAffine, kMatvec, kSmul, kPick,
    kTanh, kSigmoid, kLog, kSoftmax, kConcat, kSum, kMean,
  };
  struct Node {
    Op op;
    NodeId a = 0;
    NodeId b = 0;
    double k = 0.0;  // affine scale / pick index
    double c = 0.0;  // affine shift
    Array value;
    std::int32_t param_index = -1;
  };
  struct ParamBinding {
    ParameterStore* store;
    std::string name;
  };

  NodeId push(Node n, const char* op_name);
  void check_exists(NodeId id) const;

  std::vector<Node> nodes_;
  std::vector<ParamBinding> params_;
  std::unordered_map<std::string, NodeId> param_nodes_;
  std::vector<Array> grads_;
  bool ran_backward_ = false;
};

// ---- graph-building helpers ------------------------------------------------

/// y = W x + b with parameters `prefix/W`, `prefix/b` (must exist in store).
Tape::NodeId affine_layer(Tape& t, ParameterStore& store, const std::string& prefix,
                          Tape::NodeId x);

/// 1 - a.
inline Tape::NodeId one_minus(Tape& t, Tape::NodeId a) { return t.affine(a, -1.0, 1.0); }

/// mean((pred - target)^2), target a constant.
Tape::NodeId mse_loss(Tape& t, Tape::NodeId pred, const Array& target);

/// sum(weights * (pred - target)^2) / sum(weights); weights are constants.
/// Throws UsageError when all weights are zero.
Tape::NodeId weighted_mse_loss(Tape& t, Tape::NodeId pred, const Array& target,
                               const Array& weights);

/// Binary cross-entropy -mean(y log p + (1-y) log(1-p)); p already in (0,1).
Tape::NodeId bce_loss(Tape& t, Tape::NodeId prob, double label);

}  // namespace seqlink
