#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqlink/array.hpp"
#include "seqlink/autoencoder.hpp"
#include "seqlink/batch.hpp"
#include "seqlink/param_store.hpp"

namespace seqlink {

/// Embedding + scoring parameters for cross-sample attention. A value
/// embedding (features -> E), a trajectory embedding (latent -> E) and a
/// score vector over the concatenation (2E -> scalar). Parameters live under
/// "pyr/..." in the store; scoring runs off the tape.
class PyramidScorer {
 public:
  PyramidScorer(ParameterStore& store, std::size_t embed_dim, std::size_t features,
                std::size_t latent_dim, std::uint64_t seed);

  std::size_t embed_dim() const { return embed_dim_; }
  std::size_t features() const { return features_; }
  std::size_t latent_dim() const { return latent_dim_; }

  /// Mean of the value embeddings over this sample's observed time points
  /// (zero vector when nothing is observed). [E]
  Array pooled_value_embedding(const TimeSeriesBatch& batch, std::size_t sample) const;

  /// Mean of the trajectory embeddings over the whole time grid. [E]
  Array pooled_trajectory_embedding(const TrajectoryBank& bank, std::size_t entry) const;

  /// Raw affinity: dot(theta, concat(ex, eu)).
  double score(const Array& pooled_value, const Array& pooled_trajectory) const;

 private:
  Array embed(const std::string& prefix, const Array& x) const;

  ParameterStore* store_;
  std::size_t embed_dim_;
  std::size_t features_;
  std::size_t latent_dim_;
};

/// One attention row per query sample over the bank entries. Rows are softmax
/// distributions over that query's candidate set; positions outside the
/// candidate set (a training sample's own bank entry) hold exact zeros.
struct ImportanceMatrix {
  Array alpha;  // [K_query, K_bank]
  std::vector<std::string> query_ids;
  std::vector<std::string> bank_ids;
  std::vector<std::vector<std::size_t>> candidates;  // bank positions, per query
};

/// Scores every query sample in `batch` against every bank entry, pooled over
/// time, then softmaxes each row over the query's candidates. A query whose id
/// appears in the bank is excluded from its own candidate set.
ImportanceMatrix attention_scores(const PyramidScorer& scorer, const TimeSeriesBatch& batch,
                                  const TrajectoryBank& bank);

/// Mean-splitting behavior.
///  - fixed: the mean is taken over the candidates still unassigned, and the
///    top level absorbs everything left. Levels always partition the
///    candidate set.
///  - as_printed: the mean keeps the full candidate count as denominator and
///    the top level filters like every other one, so high-affinity leftovers
///    can end up assigned to no level. Kept for comparison only.
enum class PyramidVariant { fixed, as_printed };

struct PyramidLevel {
  std::vector<std::size_t> member_positions;  // bank positions, ascending
  std::vector<std::string> member_ids;
  Array trajectory;  // [n, latent]; zeros when the level is empty
};

/// Sorts `candidates` into `levels` levels by iterative mean-splitting of
/// their attention weights: each level below the top takes the remaining
/// candidates with weight <= mean(remaining); the top level takes the rest.
/// A single remaining candidate is never consumed early — it rides up to the
/// top level, which therefore holds the maximum-weight candidate whenever the
/// weights are not all equal. Each level's trajectory is the elementwise mean
/// of its members' bank trajectories.
std::vector<PyramidLevel> pyramidal_sort(const Array& alpha_row,
                                         const std::vector<std::size_t>& candidates,
                                         const TrajectoryBank& bank, std::size_t levels,
                                         PyramidVariant variant = PyramidVariant::fixed);

struct ImportancePyramid {
  std::string query_id;
  std::vector<PyramidLevel> levels;  // levels[0] = least related ... back() = apex
};

/// One pyramid per query sample, plus the level-weight snapshot used when the
/// set was built (level j of L starts at j/L, so the apex starts at 1).
struct PyramidSet {
  std::size_t levels = 0;
  Array weights;  // [levels]
  std::vector<ImportancePyramid> pyramids;

  std::string to_json() const;
  static PyramidSet from_json(const std::string& text);
  void save(const std::string& path) const;
  static PyramidSet load(const std::string& path);
};

/// Default level-weight initialization: w_j = j / L for j = 1..L.
Array default_level_weights(std::size_t levels);

/// Scores the batch against the bank and pyramid-sorts every query row.
PyramidSet build_pyramids(const PyramidScorer& scorer, const TimeSeriesBatch& batch,
                          const TrajectoryBank& bank, std::size_t levels,
                          PyramidVariant variant = PyramidVariant::fixed);

}  // namespace seqlink
