#include "seqlink/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "seqlink/errors.hpp"
#include "seqlink/rng.hpp"

namespace seqlink {

using nlohmann::json;

std::pair<TimeSeriesBatch, CorruptionPlan> cut_out(const TimeSeriesBatch& batch,
                                                   std::size_t removal_count,
                                                   std::uint64_t seed) {
  CorruptionPlan plan;
  plan.removal_count = removal_count;
  plan.seed = seed;
  TimeSeriesBatch out = batch;
  for (std::size_t k = 0; k < batch.samples(); ++k) {
    std::vector<std::size_t> observed;
    for (std::size_t i = 0; i < batch.length(); ++i) {
      if (batch.observed_at(k, i)) observed.push_back(i);
    }
    if (removal_count > observed.size()) {
      throw UsageError("cut_out: removal_count " + std::to_string(removal_count) +
                       " exceeds the " + std::to_string(observed.size()) +
                       " observed points of sample '" + batch.ids[k] + "'");
    }
    Rng rng = substream(seed, "cutout", k);
    rng.shuffle(observed);
    std::vector<std::size_t> removed(observed.begin(),
                                     observed.begin() + std::ptrdiff_t(removal_count));
    std::sort(removed.begin(), removed.end());
    for (std::size_t i : removed) {
      for (std::size_t d = 0; d < batch.features(); ++d) {
        out.x.at(k, i, d) = 0.0;
        out.m.at(k, i, d) = 0.0;
      }
    }
    plan.removed.push_back(std::move(removed));
  }
  return {std::move(out), std::move(plan)};
}

// ---- TrajectoryBank ------------------------------------------------------------

Array TrajectoryBank::trajectory_point(std::size_t sample, std::size_t time_index) const {
  if (sample >= samples() || time_index >= length()) {
    throw UsageError("TrajectoryBank: index (" + std::to_string(sample) + ", " +
                     std::to_string(time_index) + ") out of range");
  }
  Array out({latent_dim});
  for (std::size_t j = 0; j < latent_dim; ++j) {
    out[j] = trajectories.at(sample, time_index, j);
  }
  return out;
}

std::string TrajectoryBank::to_json() const {
  json doc = {
      {"format_version", 1},
      {"latent_dim", latent_dim},
      {"sample_ids", sample_ids},
      {"time_grid", time_grid.vec()},
      {"trajectories", {{"shape", trajectories.shape()}, {"data", trajectories.vec()}}},
  };
  return doc.dump();
}

TrajectoryBank TrajectoryBank::from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("trajectory bank: ") + e.what());
  }
  if (!doc.contains("format_version") || doc["format_version"].get<int>() != 1) {
    throw ParseError("trajectory bank: unsupported format_version");
  }
  TrajectoryBank bank;
  bank.latent_dim = doc.at("latent_dim").get<std::size_t>();
  bank.sample_ids = doc.at("sample_ids").get<std::vector<std::string>>();
  auto grid = doc.at("time_grid").get<std::vector<double>>();
  const std::size_t grid_len = grid.size();
  bank.time_grid = Array({grid_len}, std::move(grid));
  bank.trajectories = Array(doc.at("trajectories").at("shape").get<std::vector<std::size_t>>(),
                            doc.at("trajectories").at("data").get<std::vector<double>>());
  if (bank.trajectories.rank() != 3 ||
      bank.trajectories.dim(0) != bank.sample_ids.size() ||
      bank.trajectories.dim(1) != bank.time_grid.size() ||
      bank.trajectories.dim(2) != bank.latent_dim) {
    throw ParseError("trajectory bank: inconsistent shapes");
  }
  if (!bank.trajectories.all_finite()) {
    throw ParseError("trajectory bank: non-finite entries");
  }
  return bank;
}

void TrajectoryBank::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write '" + path + "'");
  out << to_json();
}

TrajectoryBank TrajectoryBank::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return from_json(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

// ---- auto-encoder ----------------------------------------------------------------

OdeAutoencoder::OdeAutoencoder(ParameterStore& store, const AutoencoderConfig& cfg,
                               std::size_t features)
    : store_(&store),
      cfg_(cfg),
      features_(features),
      cell_(store, "ae/enc/cell", cfg.latent, features, derive_seed(cfg.seed, "ae/cell")),
      dyn_(store, "ae/enc/dyn", cfg.latent, cfg.ode_units, derive_seed(cfg.seed, "ae/dyn")) {
  define_linear(*store_, "ae/dec", features_, cfg_.latent, derive_seed(cfg_.seed, "ae/dec"));
}

std::vector<Tape::NodeId> OdeAutoencoder::encode(Tape& t, const TimeSeriesBatch& batch,
                                                 std::size_t sample) const {
  OdeRnnOptions opts;
  opts.method = cfg_.method;
  opts.substeps = cfg_.substeps;
  return ode_rnn_forward(t, dyn_.tape_fn(), cell_, batch, sample, opts);
}

Array OdeAutoencoder::encode_all(const TimeSeriesBatch& batch) const {
  Array out({batch.samples(), batch.length(), cfg_.latent});
  for (std::size_t k = 0; k < batch.samples(); ++k) {
    Tape t;
    const auto states = encode(t, batch, k);
    for (std::size_t i = 0; i < states.size(); ++i) {
      const Array& u = t.value(states[i]);
      for (std::size_t j = 0; j < cfg_.latent; ++j) out.at(k, i, j) = u[j];
    }
  }
  return out;
}

Tape::NodeId OdeAutoencoder::decode(Tape& t, Tape::NodeId u) const {
  return affine_layer(t, *store_, "ae/dec", u);
}

AeTrainLog OdeAutoencoder::train(const TimeSeriesBatch& train_batch) {
  AeTrainLog log;
  const std::size_t K = train_batch.samples();
  const std::size_t n = train_batch.length();

  // Samples with no observed point at all contribute nothing to the loss.
  std::vector<std::size_t> eligible;
  std::size_t min_observed = n;
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t obs = train_batch.observed_points(k);
    if (obs > 0) {
      eligible.push_back(k);
      min_observed = std::min(min_observed, obs);
    }
  }
  if (eligible.empty()) {
    throw UsageError("train_autoencoder: no sample has any observed point");
  }

  int adam_steps = 0;
  for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
    const std::size_t removal =
        cfg_.removal_count > 0
            ? cfg_.removal_count
            : std::size_t(std::floor(0.2 * double(min_observed)));
    const auto [corrupted, plan] =
        cut_out(train_batch, removal, derive_seed(cfg_.seed, "ae/cutout", epoch));

    store_->zero_grad();
    double epoch_loss = 0.0;
    for (std::size_t k : eligible) {
      Tape t;
      const auto states = encode(t, corrupted, k);
      // Flatten predictions/targets/weights over (time, feature); the weight
      // is the ORIGINAL mask, so corrupted-away positions still count.
      Tape::NodeId preds = decode(t, states[0]);
      for (std::size_t i = 1; i < n; ++i) preds = t.concat(preds, decode(t, states[i]));
      Array target({n * features_});
      Array weights({n * features_});
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t d = 0; d < features_; ++d) {
          target[i * features_ + d] = train_batch.x.at(k, i, d);
          weights[i * features_ + d] = train_batch.m.at(k, i, d);
        }
      }
      Tape::NodeId loss = weighted_mse_loss(t, preds, target, weights);
      epoch_loss += t.value(loss)[0];
      // Scale so accumulated gradients implement the mean over samples.
      t.backward(t.affine(loss, 1.0 / double(eligible.size()), 0.0));
    }
    epoch_loss /= double(eligible.size());
    log.loss_curve.push_back(epoch_loss);
    if (!std::isfinite(epoch_loss)) {
      throw NumericError("train_autoencoder: non-finite loss at epoch " +
                         std::to_string(epoch + 1));
    }
    AdamOptions opt;
    opt.lr = cfg_.lr;
    adam_step(*store_, opt, ++adam_steps);
  }

  log.final_loss = log.loss_curve.empty() ? 0.0 : log.loss_curve.back();
  if (!log.loss_curve.empty() && log.final_loss >= log.loss_curve.front() &&
      cfg_.epochs > 1) {
    log.warnings.push_back("reconstruction loss did not decrease over the run (" +
                           std::to_string(log.loss_curve.front()) + " -> " +
                           std::to_string(log.final_loss) + ")");
  }
  return log;
}

TrajectoryBank OdeAutoencoder::export_bank(const TimeSeriesBatch& clean_batch) const {
  TrajectoryBank bank;
  bank.latent_dim = cfg_.latent;
  bank.sample_ids = clean_batch.ids;
  bank.time_grid = clean_batch.t;
  bank.trajectories = encode_all(clean_batch);
  if (!bank.trajectories.all_finite()) {
    throw NumericError("export_bank: encoder produced non-finite trajectories");
  }
  return bank;
}

}  // namespace seqlink
