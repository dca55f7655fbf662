#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqlink/data.hpp"
#include "seqlink/linkode.hpp"
#include "seqlink/metrics.hpp"

namespace seqlink {

enum class ModelKind {
  rnn,              // recurrent cell only; state frozen between observations
  ode_rnn,          // cell + learned dynamics between observations
  seqlink,          // full pipeline: bank -> pyramids -> cross-sample model
  seqlink_unified,  // single level holding every candidate (no sorting)
  seqlink_most,     // apex level only
  seqlink_least,    // bottom level only
};

ModelKind model_from_string(const std::string& s);
std::string to_string(ModelKind model);
bool is_seqlink_variant(ModelKind model);

/// One experiment: dataset construction, pipeline stages, training and
/// evaluation knobs. Defaults follow the reference setup (lr 0.01, 200 epochs,
/// batch 200, latent width 10, 100 dynamics units, 80/20 split, features
/// rescaled to (0,1)); `desk_profile()` shrinks it to minutes-scale runs.
struct ExperimentConfig {
  // dataset
  std::string source = "synthetic";  // "synthetic" | "csv"
  std::string csv_path;
  std::size_t samples = 1000;  // K (synthetic)
  std::size_t length = 100;    // n (synthetic)
  double sparsity = 0.0;       // cut-out fraction applied to the dataset
  GapShape gap_shape = GapShape::iid;
  std::uint64_t data_seed = 0;
  double train_fraction = 0.8;
  bool normalize = true;

  // model + task
  ModelKind model = ModelKind::seqlink;
  TaskKind task = TaskKind::regression;

  // recurrence solver (fixed-step on the tape; adaptive dopri5 stays in the
  // standalone solver)
  SolveMethod method = SolveMethod::rk4;
  int substeps = 4;

  // optimization
  double lr = 0.01;
  std::size_t epochs = 200;
  std::size_t batch_size = 200;

  // architecture
  std::size_t latent = 10;      // bank latent width H_u
  std::size_t hidden = 16;      // model hidden width
  std::size_t ode_units = 100;  // dynamics MLP width (both stages)
  std::size_t embed_dim = 16;   // attention embedding width E
  std::size_t levels = 3;       // pyramid levels L
  PyramidVariant pyramid_variant = PyramidVariant::fixed;

  // auto-encoder stage
  std::size_t ae_epochs = 20;

  // runs
  std::vector<std::uint64_t> seeds = {1, 2, 3};

  // artifacts
  std::string artifact_dir = "artifacts";  // SEQLINK_ARTIFACT_DIR overrides
  bool write_artifacts = true;

  // stage control: load frozen artifacts instead of running the stages
  bool run_ae_stage = true;
  bool run_pyramid_stage = true;
  std::string bank_path;
  std::string train_pyramid_path;
  std::string test_pyramid_path;

  std::string to_json() const;
  static ExperimentConfig from_json(const std::string& text);
  static ExperimentConfig load(const std::string& path);

  /// Applies a `key=value` override onto the JSON form (value parsed as a
  /// JSON literal when possible, else taken as a string).
  void set_override(const std::string& assignment);

  /// FNV-1a over the canonical JSON form; equal configs hash equal.
  std::uint64_t hash() const;

  /// Stable run identifier: "<model>-<hash prefix>".
  std::string run_id() const;
};

/// Minutes-scale profile used by the integration suite: K=100, n=100,
/// 30 epochs, batch 20, 3 seeds, narrower widths.
ExperimentConfig desk_profile();

struct PreparedSplits {
  TimeSeriesBatch train;
  TimeSeriesBatch test;
  DatasetManifest manifest;
};

/// Dataset construction for one seed exactly as the harness performs it:
/// generate or load, apply the cut-out, split, then fit normalization on the
/// training split and apply it to both.
PreparedSplits prepare_dataset(const ExperimentConfig& config, std::uint64_t seed);

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool aborted = false;              // non-finite loss stopped this seed
  double test_mse = 0.0;             // NaN when unavailable
  double test_auc = 0.0;             // NaN unless classification
  std::vector<double> loss_curve;    // model training loss per epoch
  std::vector<double> ae_loss_curve; // auto-encoder stage (seqlink variants)
  std::vector<std::string> warnings;
};

struct MetricsReport {
  std::string run_id;
  std::string model;
  std::uint64_t config_hash = 0;
  std::string config_json;  // full config echo
  std::vector<SeedOutcome> per_seed;
  // Aggregates over non-aborted seeds; NaN marks an absent statistic
  // (std needs >= 2 seeds).
  double mean_mse = 0.0;
  double std_mse = 0.0;
  double mean_auc = 0.0;
  double std_auc = 0.0;
  bool partial = false;  // some seed aborted; aggregates cover the rest
  double wall_clock_seconds = 0.0;
  std::vector<std::string> artifact_paths;

  /// Everything above; wall clock lives under a separate "timing" key so
  /// determinism checks can drop it.
  std::string to_json() const;
};

/// Trains and evaluates `config.model` once per seed (full pipeline for
/// seqlink variants) and aggregates. Artifacts are written under
/// `<artifact root>/<run id>/` unless write_artifacts is off.
MetricsReport run_training(const ExperimentConfig& config);

/// Single level holding the union of all candidates: what the model sees when
/// sorting is bypassed. Contexts match an L=1 pyramid build exactly.
PyramidSet collapse_to_unified(const PyramidSet& base, const TrajectoryBank& bank);

/// Single-level set keeping only `level` from each pyramid (0 = least
/// related, L-1 = apex).
PyramidSet select_level_only(const PyramidSet& base, std::size_t level);

struct AblationReport {
  std::vector<MetricsReport> variants;  // seqlink, unified, most, least
  std::string to_json() const;
};

/// Runs the full model and the three context ablations over the same seeds,
/// sharing each seed's bank and base pyramids across variants.
AblationReport run_ablation(const ExperimentConfig& base);

struct SweepCell {
  std::size_t length = 0;
  double fraction = 0.0;
  MetricsReport report;
};

struct SweepReport {
  std::vector<SweepCell> cells;
  std::string to_json() const;
};

/// Grid of lengths x sparsity fractions with shared seeds, so cells within a
/// length differ only by the cut-out applied to the same base dataset.
SweepReport run_sparsity_sweep(const ExperimentConfig& base,
                               const std::vector<std::size_t>& lengths,
                               const std::vector<double>& fractions);

/// Root directory for artifacts: SEQLINK_ARTIFACT_DIR when set, else the
/// configured artifact_dir.
std::string artifact_root(const ExperimentConfig& config);

}  // namespace seqlink
