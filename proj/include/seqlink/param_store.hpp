#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "seqlink/array.hpp"

namespace seqlink {

struct AdamOptions {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Flat registry of trainable arrays. Each entry carries its value, a
/// gradient accumulator, and Adam moment buffers that persist across steps.
/// Names are namespaced with '/' prefixes ("ae/...", "linkode/...") so that
/// pipeline stages keep disjoint parameter sets in one store or in separate
/// stores interchangeably.
class ParameterStore {
 public:
  void define(const std::string& name, Array value);
  bool contains(const std::string& name) const;

  const Array& value(const std::string& name) const;
  Array& mutable_value(const std::string& name);
  const Array& grad(const std::string& name) const;
  void accumulate_grad(const std::string& name, const Array& g);
  void zero_grad();

  /// Names in lexicographic order (map order), the canonical iteration order
  /// for checkpoints and deterministic updates.
  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }

  int step() const { return step_; }

  /// Serialized checkpoint: {format_version, names, shapes, values,
  /// adam_moments, step}. Doubles round-trip exactly.
  std::string to_checkpoint_json() const;
  static ParameterStore from_checkpoint_json(const std::string& text);
  void save(const std::string& path) const;
  static ParameterStore load(const std::string& path);

  /// Copy of all current values, keyed by name. Used by tests that check
  /// stage isolation (which parameters a training phase actually moved).
  std::map<std::string, Array> snapshot_values() const;

  friend void adam_step(ParameterStore& store, const AdamOptions& opt, int step);

 private:
  struct Entry {
    Array value;
    Array grad;
    Array m;
    Array v;
  };
  std::map<std::string, Entry> entries_;
  int step_ = 0;
};

/// One bias-corrected Adam update over every parameter with step index
/// `step` (1-based). Gradients are read from the store's accumulators and
/// left untouched; moment buffers persist inside the store.
void adam_step(ParameterStore& store, const AdamOptions& opt, int step);

/// Weight init: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), seeded by a
/// substream of (seed, name) so definition order never matters.
Array init_weight(std::size_t rows, std::size_t cols, std::uint64_t seed,
                  const std::string& name);

/// Defines `prefix/W` [out, in] and `prefix/b` [out] (bias zero) if absent.
void define_linear(ParameterStore& store, const std::string& prefix,
                   std::size_t out_dim, std::size_t in_dim, std::uint64_t seed);

}  // namespace seqlink
