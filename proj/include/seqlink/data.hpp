#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqlink/batch.hpp"

namespace seqlink {

/// Per-feature range observed on the fitting split. `constant` marks a
/// degenerate feature (max == min) that normalization pins to 0.5.
struct FeatureBounds {
  double lo = 0.0;
  double hi = 1.0;
  bool constant = false;
};

struct DatasetManifest {
  std::string source;         // "synthetic" or "csv"
  std::size_t length = 0;     // n
  std::size_t dimension = 0;  // D
  double sparsity = 0.0;
  std::uint64_t seed = 0;
  std::vector<FeatureBounds> bounds;
  std::vector<std::string> warnings;

  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text);
};

/// The per-sample draw behind one synthetic trajectory.
struct TrajectoryParams {
  double amplitude = 0.0;      // 1 + 0.25 * N(0,1)
  double log_frequency = 0.0;  // log 4 + 0.3 * N(0,1), cycles per unit time
  double phase = 0.0;          // 0.5 * N(0,1)
};

/// K periodic trajectories x_k(t) = a_k sin(2 pi f_k t + phi_k) + 0.1 eps on
/// the uniform grid t_i = i/n, fully observed, with the noiseless next grid
/// value (t = 1) as the regression target. Deterministic per seed.
TimeSeriesBatch generate_gaussian_periodic(std::size_t K, std::size_t n,
                                           std::uint64_t seed,
                                           std::vector<TrajectoryParams>* params_out = nullptr);

enum class GapShape {
  contiguous,  // one run of consecutive removals per sample
  iid,         // scattered single-point removals
};

/// Removes floor(fraction * n) time points per sample, zeroing both value and
/// mask. fraction 0 is the identity; a fraction too small to remove a whole
/// point, or >= 1, is a usage error.
TimeSeriesBatch apply_sparsity(const TimeSeriesBatch& batch, double fraction,
                               std::uint64_t seed,
                               GapShape shape = GapShape::contiguous);

/// Parses `series_id,time,value_1..value_D[,mask_1..mask_D][,target]`.
/// Rows are grouped by series and time-sorted; the shared grid is the sorted
/// union of all times, with rows a series lacks left unobserved. Errors carry
/// `path:line:` prefixes.
TimeSeriesBatch load_csv(const std::string& path);

struct NormalizationResult {
  TimeSeriesBatch batch;
  std::vector<FeatureBounds> bounds;
  std::vector<std::string> warnings;
};

/// Fits per-feature min/max over the observed values of `batch` (call it on
/// the training split only) and rescales them to [0,1]. Unobserved positions
/// stay zero. `normalize_targets` applies the same per-feature map to target
/// columns (requires target width == D).
NormalizationResult normalize_01(const TimeSeriesBatch& batch,
                                 bool normalize_targets = false);

/// Applies previously fitted bounds (e.g. training bounds to test data).
/// Results may leave [0,1]; that is expected.
TimeSeriesBatch normalize_with(const TimeSeriesBatch& batch,
                               const std::vector<FeatureBounds>& bounds,
                               bool normalize_targets = false);

/// Inverse map over observed values (and targets when width matches).
TimeSeriesBatch denormalize(const TimeSeriesBatch& batch,
                            const std::vector<FeatureBounds>& bounds,
                            bool denormalize_targets = false);

/// Disjoint shuffled split: floor(train_fraction * K) training samples, the
/// rest test. Deterministic per seed.
std::pair<TimeSeriesBatch, TimeSeriesBatch> split_shuffled(
    const TimeSeriesBatch& batch, double train_fraction, std::uint64_t seed);

/// Versioned JSON batch serialization; doubles round-trip bit-exactly.
std::string batch_to_json(const TimeSeriesBatch& batch);
TimeSeriesBatch batch_from_json(const std::string& text);
void save_batch(const std::string& path, const TimeSeriesBatch& batch);
TimeSeriesBatch load_batch(const std::string& path);

}  // namespace seqlink
