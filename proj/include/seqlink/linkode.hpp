#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqlink/autoencoder.hpp"
#include "seqlink/batch.hpp"
#include "seqlink/dynamics.hpp"
#include "seqlink/pyramid.hpp"
#include "seqlink/recurrent.hpp"

namespace seqlink {

struct LinkOdeConfig {
  std::size_t hidden = 16;     // own hidden-state width
  std::size_t ode_units = 100; // hidden width of the dynamics MLP
  std::size_t latent = 10;     // bank latent width (H_u)
  std::size_t levels = 3;      // pyramid levels L
  std::size_t out_width = 1;
  TaskKind task = TaskKind::regression;
  double lr = 0.01;
  std::size_t epochs = 200;
  std::size_t batch_size = 200;
  std::uint64_t seed = 0;
  SolveMethod method = SolveMethod::rk4;
  int substeps = 4;
};

/// Per-level cross context at one time index: row j = weights[j] * (level-j
/// aggregated trajectory at that time). Empty levels contribute zero rows.
Array level_combine(const Array& weights, const ImportancePyramid& pyramid,
                    std::size_t time_index);

/// Recurrent model that evolves its own hidden state through time like an
/// ODE-RNN but additionally consults the pyramid of related bank trajectories:
/// at observed points the cell fuses (evolved state, flattened level context,
/// masked values); during gaps a gated linear map injects the context into the
/// evolved state. Parameters live under "linkode/..." in the store:
///   linkode/cell/*    recurrent cell over [levels*latent + features] inputs
///   linkode/dyn/*     own-state dynamics MLP
///   linkode/levels/w  level weights, initialized to j/L
///   linkode/gap/Wc    gap-injection map [hidden, levels*latent]
///   linkode/gap/g     gap gate pre-activation, initialized to -4
///   linkode/head/*    output head
class LinkOdeModel {
 public:
  LinkOdeModel(ParameterStore& store, const LinkOdeConfig& cfg, std::size_t features);

  const LinkOdeConfig& config() const { return cfg_; }
  ParameterStore& store() const { return *store_; }

  /// Level context at `time_index`, flattened level-major to [levels*latent],
  /// built from the learnable level weights. Gradients reach the weights but
  /// never the pyramid content.
  Tape::NodeId level_context(Tape& t, const ImportancePyramid& pyramid,
                             std::size_t time_index) const;

  /// Hidden-state recursion for one sample, one state node per grid index.
  std::vector<Tape::NodeId> forward(Tape& t, const TimeSeriesBatch& batch,
                                    std::size_t sample,
                                    const ImportancePyramid& pyramid) const;

  /// Head output from the final state.
  Tape::NodeId predict_node(Tape& t, const TimeSeriesBatch& batch, std::size_t sample,
                            const ImportancePyramid& pyramid) const;

  /// Values-only prediction for one sample. [out_width]
  Array predict(const TimeSeriesBatch& batch, std::size_t sample,
                const ImportancePyramid& pyramid) const;

  const GruCell& cell() const { return cell_; }
  const MlpDynamics& dynamics() const { return dyn_; }
  const OutputHead& head() const { return head_; }

 private:
  void check_pyramid(const TimeSeriesBatch& batch, std::size_t sample,
                     const ImportancePyramid& pyramid) const;

  ParameterStore* store_;
  LinkOdeConfig cfg_;
  std::size_t features_;
  GruCell cell_;
  MlpDynamics dyn_;
  OutputHead head_;
};

/// Finds each sample's pyramid by id and predicts all samples. [K, out_width]
Array seqlink_predict(const LinkOdeModel& model, const TimeSeriesBatch& batch,
                      const PyramidSet& pyramids);

struct LinkTrainLog {
  std::vector<double> loss_curve;  // mean training loss per epoch
  double final_loss = 0.0;
  bool aborted = false;  // true when a non-finite loss stopped training early
  std::vector<std::string> warnings;
};

/// Minibatch Adam over the model store: per epoch, shuffle the sample order,
/// then for each minibatch accumulate per-sample loss gradients (scaled to the
/// minibatch mean) and step. A non-finite minibatch loss aborts training with
/// the flag set instead of corrupting the parameters.
LinkTrainLog train_link_ode(LinkOdeModel& model, const TimeSeriesBatch& train,
                            const PyramidSet& pyramids);

/// Checkpoint bundling everything inference needs: the parameter store plus
/// pointers to the frozen artifacts it was trained against.
struct ModelBundle {
  std::string store_json;
  std::string bank_path;
  std::string pyramid_path;
  std::uint64_t config_hash = 0;

  std::string to_json() const;
  static ModelBundle from_json(const std::string& text);
  void save(const std::string& path) const;
  static ModelBundle load(const std::string& path);
};

}  // namespace seqlink
