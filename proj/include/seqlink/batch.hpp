#pragma once

#include <string>
#include <vector>

#include "seqlink/array.hpp"

namespace seqlink {

/// A batch of K aligned time series on a shared grid of n time points with D
/// features. Unobserved entries are zero in both `x` and `m`; that coupling is
/// enforced by validate() and re-checked after every transformation that
/// touches the batch.
struct TimeSeriesBatch {
  Array x;       // [K, n, D] values, zero wherever the mask is zero
  Array m;       // [K, n, D] mask, each entry 0 or 1
  Array t;       // [n] shared strictly ascending time grid
  Array target;  // [K, D_out] per-sample targets (may be empty: [K, 0])
  std::vector<std::string> ids;  // K sample identifiers

  std::size_t samples() const { return x.dim(0); }
  std::size_t length() const { return x.dim(1); }
  std::size_t features() const { return x.dim(2); }
  std::size_t target_width() const { return target.dim(1); }

  /// Throws ShapeError/UsageError when any structural invariant is broken.
  void validate() const;

  /// Number of time points with at least one observed feature, per sample.
  std::size_t observed_points(std::size_t sample) const;

  /// True when any feature of `sample` is observed at time index `i`.
  bool observed_at(std::size_t sample, std::size_t i) const;

  /// Copy of one sample's value row at time index i, as [D].
  Array value_at(std::size_t sample, std::size_t i) const;
  Array mask_at(std::size_t sample, std::size_t i) const;
};

}  // namespace seqlink
