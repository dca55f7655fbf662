#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "seqlink/batch.hpp"
#include "seqlink/dynamics.hpp"
#include "seqlink/recurrent.hpp"

namespace seqlink {

/// Which time points a cut_out call removed, per sample.
struct CorruptionPlan {
  std::size_t removal_count = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> removed;  // sorted time indices
};

/// Zeroes `removal_count` observed time points per sample in both value and
/// mask (whole time points, all features). Every other entry is bit-identical
/// to the input. Deterministic per seed.
std::pair<TimeSeriesBatch, CorruptionPlan> cut_out(const TimeSeriesBatch& batch,
                                                   std::size_t removal_count,
                                                   std::uint64_t seed);

/// Frozen per-sample latent trajectories exported by the auto-encoder. The
/// downstream model only ever reads from it.
struct TrajectoryBank {
  std::size_t latent_dim = 0;
  std::vector<std::string> sample_ids;
  Array time_grid;     // [n]
  Array trajectories;  // [K, n, latent_dim]

  std::size_t samples() const { return sample_ids.size(); }
  std::size_t length() const { return time_grid.size(); }

  /// Copy of one latent state u_i^(k), as [latent_dim].
  Array trajectory_point(std::size_t sample, std::size_t time_index) const;

  std::string to_json() const;
  static TrajectoryBank from_json(const std::string& text);
  void save(const std::string& path) const;
  static TrajectoryBank load(const std::string& path);
};

struct AutoencoderConfig {
  std::size_t latent = 10;    // H_u
  std::size_t ode_units = 16; // hidden width of the dynamics MLP
  std::size_t epochs = 20;
  double lr = 0.01;
  // 0 means the default schedule: 20% of the scarcest sample's observed
  // count, redrawn every epoch.
  std::size_t removal_count = 0;
  std::uint64_t seed = 0;
  SolveMethod method = SolveMethod::rk4;
  int substeps = 4;
};

struct AeTrainLog {
  std::vector<double> loss_curve;  // one mean reconstruction loss per epoch
  double final_loss = 0.0;
  std::vector<std::string> warnings;
};

/// Corrupt -> encode with an ODE-RNN (latent width H_u) -> decode with one
/// affine layer -> minimize reconstruction error on originally observed
/// positions. Parameters live under "ae/..." in the store.
class OdeAutoencoder {
 public:
  OdeAutoencoder(ParameterStore& store, const AutoencoderConfig& cfg,
                 std::size_t features);

  std::size_t latent() const { return cfg_.latent; }
  const AutoencoderConfig& config() const { return cfg_; }

  /// Latent trajectory u_1..u_n for one sample, on the tape. Exactly the
  /// shared hidden-state recursion of the recurrent layer.
  std::vector<Tape::NodeId> encode(Tape& t, const TimeSeriesBatch& batch,
                                   std::size_t sample) const;

  /// All samples, values only: [K, n, latent].
  Array encode_all(const TimeSeriesBatch& batch) const;

  Tape::NodeId decode(Tape& t, Tape::NodeId u) const;

  /// Full training loop over `train_batch` (corruption redrawn per epoch,
  /// full-batch Adam). Loss is the per-sample mean squared reconstruction
  /// error over originally observed positions, averaged over samples.
  AeTrainLog train(const TimeSeriesBatch& train_batch);

  /// Bank of the CLEAN (uncorrupted) sequences under the trained encoder.
  TrajectoryBank export_bank(const TimeSeriesBatch& clean_batch) const;

 private:
  ParameterStore* store_;
  AutoencoderConfig cfg_;
  std::size_t features_;
  GruCell cell_;
  MlpDynamics dyn_;
};

}  // namespace seqlink
