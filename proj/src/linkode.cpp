#include "seqlink/linkode.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "seqlink/errors.hpp"
#include "seqlink/rng.hpp"

namespace seqlink {

using nlohmann::json;

Array level_combine(const Array& weights, const ImportancePyramid& pyramid,
                    std::size_t time_index) {
  const std::size_t levels = pyramid.levels.size();
  if (weights.size() != levels) {
    throw ShapeError("level_combine: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(levels) + " levels");
  }
  if (levels == 0) throw UsageError("level_combine: pyramid has no levels");
  const Array& first = pyramid.levels[0].trajectory;
  if (time_index >= first.rows()) {
    throw UsageError("level_combine: time index " + std::to_string(time_index) +
                     " outside the grid of length " + std::to_string(first.rows()));
  }
  const std::size_t latent = first.cols();
  Array p({levels, latent});
  for (std::size_t j = 0; j < levels; ++j) {
    const Array& traj = pyramid.levels[j].trajectory;
    for (std::size_t d = 0; d < latent; ++d) {
      p.at(j, d) = weights[j] * traj.at(time_index, d);
    }
  }
  return p;
}

LinkOdeModel::LinkOdeModel(ParameterStore& store, const LinkOdeConfig& cfg,
                           std::size_t features)
    : store_(&store),
      cfg_(cfg),
      features_(features),
      cell_(store, "linkode/cell", cfg.hidden, cfg.levels * cfg.latent + features,
            derive_seed(cfg.seed, "linkode/cell")),
      dyn_(store, "linkode/dyn", cfg.hidden, cfg.ode_units, derive_seed(cfg.seed, "linkode/dyn")),
      head_(store, "linkode/head", cfg.out_width, cfg.hidden, cfg.task,
            derive_seed(cfg.seed, "linkode/head")) {
  if (cfg.levels < 1) throw UsageError("LinkOdeModel: need at least one pyramid level");
  if (!store.contains("linkode/levels/w")) {
    store.define("linkode/levels/w", default_level_weights(cfg.levels));
  }
  if (!store.contains("linkode/gap/Wc")) {
    store.define("linkode/gap/Wc", init_weight(cfg.hidden, cfg.levels * cfg.latent,
                                               derive_seed(cfg.seed, "linkode/gap"),
                                               "linkode/gap/Wc"));
  }
  if (!store.contains("linkode/gap/g")) {
    store.define("linkode/gap/g", Array({1}, {-4.0}));
  }
}

void LinkOdeModel::check_pyramid(const TimeSeriesBatch& batch, std::size_t sample,
                                 const ImportancePyramid& pyramid) const {
  if (pyramid.levels.size() != cfg_.levels) {
    throw UsageError("LinkOdeModel: pyramid has " + std::to_string(pyramid.levels.size()) +
                     " levels, model expects " + std::to_string(cfg_.levels));
  }
  if (!pyramid.query_id.empty() && pyramid.query_id != batch.ids[sample]) {
    throw UsageError("LinkOdeModel: pyramid for '" + pyramid.query_id +
                     "' used with sample '" + batch.ids[sample] + "'");
  }
  for (const PyramidLevel& level : pyramid.levels) {
    if (level.trajectory.rank() != 2 || level.trajectory.rows() != batch.length() ||
        level.trajectory.cols() != cfg_.latent) {
      throw UsageError("LinkOdeModel: level trajectory shape " + level.trajectory.shape_str() +
                       " does not match the grid (length " + std::to_string(batch.length()) +
                       ", latent " + std::to_string(cfg_.latent) + ")");
    }
  }
}

Tape::NodeId LinkOdeModel::level_context(Tape& t, const ImportancePyramid& pyramid,
                                         std::size_t time_index) const {
  const Tape::NodeId w = t.param(*store_, "linkode/levels/w");
  Tape::NodeId flat = 0;
  for (std::size_t j = 0; j < cfg_.levels; ++j) {
    const Array& traj = pyramid.levels[j].trajectory;
    Array slice({cfg_.latent});
    for (std::size_t d = 0; d < cfg_.latent; ++d) slice[d] = traj.at(time_index, d);
    const Tape::NodeId row = t.smul(t.leaf(std::move(slice)), t.pick(w, j));
    flat = j == 0 ? row : t.concat(flat, row);
  }
  return flat;
}

std::vector<Tape::NodeId> LinkOdeModel::forward(Tape& t, const TimeSeriesBatch& batch,
                                                std::size_t sample,
                                                const ImportancePyramid& pyramid) const {
  if (sample >= batch.samples()) {
    throw UsageError("LinkOdeModel: sample index out of range");
  }
  if (batch.features() != features_) {
    throw ShapeError("LinkOdeModel: batch has " + std::to_string(batch.features()) +
                     " features, model expects " + std::to_string(features_));
  }
  if (cfg_.method == SolveMethod::dopri5) {
    throw UsageError("LinkOdeModel: recurrence uses fixed-step methods; dopri5 is "
                     "reserved for standalone solves");
  }
  check_pyramid(batch, sample, pyramid);

  const std::size_t n = batch.length();
  Tape::NodeId h = t.leaf(Array::zeros({cfg_.hidden}));
  std::vector<Tape::NodeId> states;
  states.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) {
      h = integrate_fixed_on_tape(t, dyn_.tape_fn(), h, batch.t.data()[i - 1],
                                  batch.t.data()[i], cfg_.substeps, cfg_.method);
    }
    const Tape::NodeId p = level_context(t, pyramid, i);
    if (batch.observed_at(sample, i)) {
      const Tape::NodeId x = t.mul(t.leaf(batch.value_at(sample, i)),
                                   t.leaf(batch.mask_at(sample, i)));
      h = cell_.step(t, h, t.concat(p, x));
    } else {
      const Tape::NodeId gate = t.sigmoid(t.param(*store_, "linkode/gap/g"));
      const Tape::NodeId inject = t.smul(t.matvec(t.param(*store_, "linkode/gap/Wc"), p), gate);
      h = t.add(h, inject);
    }
    states.push_back(h);
  }
  return states;
}

Tape::NodeId LinkOdeModel::predict_node(Tape& t, const TimeSeriesBatch& batch,
                                        std::size_t sample,
                                        const ImportancePyramid& pyramid) const {
  const auto states = forward(t, batch, sample, pyramid);
  return head_.predict(t, states.back());
}

Array LinkOdeModel::predict(const TimeSeriesBatch& batch, std::size_t sample,
                            const ImportancePyramid& pyramid) const {
  Tape t;
  return t.value(predict_node(t, batch, sample, pyramid));
}

namespace {

std::unordered_map<std::string, std::size_t> pyramid_index(const PyramidSet& pyramids) {
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < pyramids.pyramids.size(); ++i) {
    by_id.emplace(pyramids.pyramids[i].query_id, i);
  }
  return by_id;
}

const ImportancePyramid& pyramid_for(const PyramidSet& pyramids,
                                     const std::unordered_map<std::string, std::size_t>& by_id,
                                     const std::string& sample_id) {
  const auto it = by_id.find(sample_id);
  if (it == by_id.end()) {
    throw UsageError("no pyramid found for sample '" + sample_id + "'");
  }
  return pyramids.pyramids[it->second];
}

}  // namespace

Array seqlink_predict(const LinkOdeModel& model, const TimeSeriesBatch& batch,
                      const PyramidSet& pyramids) {
  const auto by_id = pyramid_index(pyramids);
  Array out({batch.samples(), model.config().out_width});
  for (std::size_t k = 0; k < batch.samples(); ++k) {
    const Array pred = model.predict(batch, k, pyramid_for(pyramids, by_id, batch.ids[k]));
    for (std::size_t j = 0; j < pred.size(); ++j) out.at(k, j) = pred[j];
  }
  return out;
}

LinkTrainLog train_link_ode(LinkOdeModel& model, const TimeSeriesBatch& train,
                            const PyramidSet& pyramids) {
  const LinkOdeConfig& cfg = model.config();
  const std::size_t K = train.samples();
  if (train.target_width() != cfg.out_width) {
    throw ShapeError("train_link_ode: target width " + std::to_string(train.target_width()) +
                     " does not match the model's " + std::to_string(cfg.out_width));
  }
  if (cfg.task == TaskKind::binary_classification && cfg.out_width != 1) {
    throw UsageError("train_link_ode: classification expects a single output");
  }
  if (cfg.batch_size < 1) throw UsageError("train_link_ode: batch_size must be positive");

  const auto by_id = pyramid_index(pyramids);
  std::vector<const ImportancePyramid*> pyr(K);
  for (std::size_t k = 0; k < K; ++k) {
    pyr[k] = &pyramid_for(pyramids, by_id, train.ids[k]);
  }

  LinkTrainLog log;
  AdamOptions opt;
  opt.lr = cfg.lr;
  int step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(K);
    std::iota(order.begin(), order.end(), std::size_t{0});
    substream(cfg.seed, "order", epoch).shuffle(order);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < K; start += cfg.batch_size) {
      const std::size_t stop = std::min(start + cfg.batch_size, K);
      const double count = double(stop - start);
      model.store().zero_grad();
      double batch_loss = 0.0;
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t k = order[b];
        Tape t;
        const Tape::NodeId pred = model.predict_node(t, train, k, *pyr[k]);
        Tape::NodeId loss;
        if (cfg.task == TaskKind::regression) {
          Array target({cfg.out_width});
          for (std::size_t j = 0; j < cfg.out_width; ++j) target[j] = train.target.at(k, j);
          loss = mse_loss(t, pred, target);
        } else {
          loss = bce_loss(t, pred, train.target.at(k, 0));
        }
        batch_loss += t.value(loss)[0];
        t.backward(t.affine(loss, 1.0 / count, 0.0));
      }
      if (!std::isfinite(batch_loss)) {
        log.aborted = true;
        log.warnings.push_back("non-finite loss in epoch " + std::to_string(epoch + 1) +
                               "; training stopped before the parameter update");
        log.final_loss = log.loss_curve.empty() ? batch_loss : log.loss_curve.back();
        return log;
      }
      adam_step(model.store(), opt, ++step);
      epoch_loss += batch_loss;
    }
    log.loss_curve.push_back(epoch_loss / double(K));
  }
  log.final_loss = log.loss_curve.empty() ? 0.0 : log.loss_curve.back();
  return log;
}

// ---- checkpoint bundle -----------------------------------------------------------

std::string ModelBundle::to_json() const {
  json doc = {
      {"format_version", 1},
      {"store", json::parse(store_json)},
      {"bank_path", bank_path},
      {"pyramid_path", pyramid_path},
      {"config_hash", config_hash},
  };
  return doc.dump();
}

ModelBundle ModelBundle::from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("model bundle: ") + e.what());
  }
  if (!doc.contains("format_version") || doc["format_version"].get<int>() != 1) {
    throw ParseError("model bundle: unsupported format_version");
  }
  ModelBundle bundle;
  bundle.store_json = doc.at("store").dump();
  bundle.bank_path = doc.at("bank_path").get<std::string>();
  bundle.pyramid_path = doc.at("pyramid_path").get<std::string>();
  bundle.config_hash = doc.at("config_hash").get<std::uint64_t>();
  return bundle;
}

void ModelBundle::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write '" + path + "'");
  out << to_json();
}

ModelBundle ModelBundle::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw UsageError("model bundle: cannot open '" + path + "'");
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return from_json(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace seqlink
