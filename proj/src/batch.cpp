#include "seqlink/batch.hpp"

#include <string>

#include "seqlink/errors.hpp"

namespace seqlink {

void TimeSeriesBatch::validate() const {
  if (x.rank() != 3) {
    throw ShapeError("TimeSeriesBatch: x must have rank 3, got shape " +
                     x.shape_str());
  }
  if (m.shape() != x.shape()) {
    throw ShapeError("TimeSeriesBatch: mask shape " + m.shape_str() +
                     " differs from value shape " + x.shape_str());
  }
  const std::size_t K = x.dim(0);
  const std::size_t n = x.dim(1);
  if (t.rank() != 1 || t.dim(0) != n) {
    throw ShapeError("TimeSeriesBatch: time grid shape " + t.shape_str() +
                     " does not match sequence length " + std::to_string(n));
  }
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (!(t.data()[i] < t.data()[i + 1])) {
      throw UsageError("TimeSeriesBatch: time grid must be strictly ascending "
                       "(violated at index " + std::to_string(i + 1) + ")");
    }
  }
  if (target.rank() != 2 || target.dim(0) != K) {
    throw ShapeError("TimeSeriesBatch: target shape " + target.shape_str() +
                     " must be [K, D_out] with K=" + std::to_string(K));
  }
  if (ids.size() != K) {
    throw ShapeError("TimeSeriesBatch: " + std::to_string(ids.size()) +
                     " ids for " + std::to_string(K) + " samples");
  }
  if (!x.all_finite() || !t.all_finite() || !target.all_finite()) {
    throw NumericError("TimeSeriesBatch: non-finite entries");
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double mv = m.data()[i];
    if (mv != 0.0 && mv != 1.0) {
      throw UsageError("TimeSeriesBatch: mask entries must be 0 or 1");
    }
    if (mv == 0.0 && x.data()[i] != 0.0) {
      throw UsageError(
          "TimeSeriesBatch: value nonzero at an unobserved position");
    }
  }
}

std::size_t TimeSeriesBatch::observed_points(std::size_t sample) const {
  std::size_t count = 0;
  for (std::size_t i = 0; i < length(); ++i) {
    if (observed_at(sample, i)) ++count;
  }
  return count;
}

bool TimeSeriesBatch::observed_at(std::size_t sample, std::size_t i) const {
  for (std::size_t d = 0; d < features(); ++d) {
    if (m.at(sample, i, d) != 0.0) return true;
  }
  return false;
}

Array TimeSeriesBatch::value_at(std::size_t sample, std::size_t i) const {
  Array out = Array::zeros({features()});
  for (std::size_t d = 0; d < features(); ++d) {
    out.data()[d] = x.at(sample, i, d);
  }
  return out;
}

Array TimeSeriesBatch::mask_at(std::size_t sample, std::size_t i) const {
  Array out = Array::zeros({features()});
  for (std::size_t d = 0; d < features(); ++d) {
    out.data()[d] = m.at(sample, i, d);
  }
  return out;
}

}  // namespace seqlink
