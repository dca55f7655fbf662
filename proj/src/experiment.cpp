#include "seqlink/experiment.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "seqlink/errors.hpp"
#include "seqlink/rng.hpp"

namespace seqlink {

namespace fs = std::filesystem;
using nlohmann::json;

ModelKind model_from_string(const std::string& s) {
  if (s == "rnn") return ModelKind::rnn;
  if (s == "ode_rnn") return ModelKind::ode_rnn;
  if (s == "seqlink") return ModelKind::seqlink;
  if (s == "seqlink_unified") return ModelKind::seqlink_unified;
  if (s == "seqlink_most") return ModelKind::seqlink_most;
  if (s == "seqlink_least") return ModelKind::seqlink_least;
  throw UsageError("unknown model '" + s +
                   "' (expected rnn, ode_rnn, seqlink, seqlink_unified, seqlink_most, "
                   "seqlink_least)");
}

std::string to_string(ModelKind model) {
  switch (model) {
    case ModelKind::rnn: return "rnn";
    case ModelKind::ode_rnn: return "ode_rnn";
    case ModelKind::seqlink: return "seqlink";
    case ModelKind::seqlink_unified: return "seqlink_unified";
    case ModelKind::seqlink_most: return "seqlink_most";
    case ModelKind::seqlink_least: return "seqlink_least";
  }
  throw UsageError("unknown model kind");
}

bool is_seqlink_variant(ModelKind model) {
  return model == ModelKind::seqlink || model == ModelKind::seqlink_unified ||
         model == ModelKind::seqlink_most || model == ModelKind::seqlink_least;
}

namespace {

std::string gap_shape_name(GapShape shape) {
  return shape == GapShape::contiguous ? "contiguous" : "iid";
}

GapShape gap_shape_from(const std::string& s) {
  if (s == "contiguous") return GapShape::contiguous;
  if (s == "iid") return GapShape::iid;
  throw UsageError("unknown gap_shape '" + s + "' (expected contiguous or iid)");
}

std::string variant_name(PyramidVariant v) {
  return v == PyramidVariant::fixed ? "fixed" : "as_printed";
}

PyramidVariant variant_from(const std::string& s) {
  if (s == "fixed") return PyramidVariant::fixed;
  if (s == "as_printed") return PyramidVariant::as_printed;
  throw UsageError("unknown pyramid_variant '" + s + "' (expected fixed or as_printed)");
}

json config_to_doc(const ExperimentConfig& c) {
  return json{
      {"source", c.source},
      {"csv_path", c.csv_path},
      {"samples", c.samples},
      {"length", c.length},
      {"sparsity", c.sparsity},
      {"gap_shape", gap_shape_name(c.gap_shape)},
      {"data_seed", c.data_seed},
      {"train_fraction", c.train_fraction},
      {"normalize", c.normalize},
      {"model", to_string(c.model)},
      {"task", to_string(c.task)},
      {"method", to_string(c.method)},
      {"substeps", c.substeps},
      {"lr", c.lr},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"latent", c.latent},
      {"hidden", c.hidden},
      {"ode_units", c.ode_units},
      {"embed_dim", c.embed_dim},
      {"levels", c.levels},
      {"pyramid_variant", variant_name(c.pyramid_variant)},
      {"ae_epochs", c.ae_epochs},
      {"seeds", c.seeds},
      {"artifact_dir", c.artifact_dir},
      {"write_artifacts", c.write_artifacts},
      {"run_ae_stage", c.run_ae_stage},
      {"run_pyramid_stage", c.run_pyramid_stage},
      {"bank_path", c.bank_path},
      {"train_pyramid_path", c.train_pyramid_path},
      {"test_pyramid_path", c.test_pyramid_path},
  };
}

template <typename T>
void read_field(const json& doc, const char* key, T& out) {
  if (doc.contains(key)) out = doc.at(key).get<T>();
}

ExperimentConfig config_from_doc(const json& doc) {
  ExperimentConfig c;
  read_field(doc, "source", c.source);
  read_field(doc, "csv_path", c.csv_path);
  read_field(doc, "samples", c.samples);
  read_field(doc, "length", c.length);
  read_field(doc, "sparsity", c.sparsity);
  if (doc.contains("gap_shape")) c.gap_shape = gap_shape_from(doc.at("gap_shape"));
  read_field(doc, "data_seed", c.data_seed);
  read_field(doc, "train_fraction", c.train_fraction);
  read_field(doc, "normalize", c.normalize);
  if (doc.contains("model")) c.model = model_from_string(doc.at("model"));
  if (doc.contains("task")) c.task = task_from_string(doc.at("task"));
  if (doc.contains("method")) c.method = solve_method_from_string(doc.at("method"));
  read_field(doc, "substeps", c.substeps);
  read_field(doc, "lr", c.lr);
  read_field(doc, "epochs", c.epochs);
  read_field(doc, "batch_size", c.batch_size);
  read_field(doc, "latent", c.latent);
  read_field(doc, "hidden", c.hidden);
  read_field(doc, "ode_units", c.ode_units);
  read_field(doc, "embed_dim", c.embed_dim);
  read_field(doc, "levels", c.levels);
  if (doc.contains("pyramid_variant")) c.pyramid_variant = variant_from(doc.at("pyramid_variant"));
  read_field(doc, "ae_epochs", c.ae_epochs);
  read_field(doc, "seeds", c.seeds);
  read_field(doc, "artifact_dir", c.artifact_dir);
  read_field(doc, "write_artifacts", c.write_artifacts);
  read_field(doc, "run_ae_stage", c.run_ae_stage);
  read_field(doc, "run_pyramid_stage", c.run_pyramid_stage);
  read_field(doc, "bank_path", c.bank_path);
  read_field(doc, "train_pyramid_path", c.train_pyramid_path);
  read_field(doc, "test_pyramid_path", c.test_pyramid_path);
  return c;
}

}  // namespace

std::string ExperimentConfig::to_json() const { return config_to_doc(*this).dump(); }

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  try {
    return config_from_doc(doc);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return from_json(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void ExperimentConfig::set_override(const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw UsageError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  json doc = config_to_doc(*this);
  if (!doc.contains(key)) {
    throw UsageError("override key '" + key + "' is not a config field");
  }
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;  // bare strings, e.g. model=seqlink
  }
  doc[key] = parsed;
  try {
    *this = config_from_doc(doc);
  } catch (const json::exception& e) {
    throw UsageError("override '" + assignment + "': " + e.what());
  }
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a(to_json()); }

std::string ExperimentConfig::run_id() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%08llx", static_cast<unsigned long long>(hash() >> 32));
  return to_string(model) + "-" + buf;
}

ExperimentConfig desk_profile() {
  ExperimentConfig c;
  c.samples = 100;
  c.length = 100;
  c.sparsity = 0.3;
  c.epochs = 30;
  c.batch_size = 20;
  c.hidden = 16;
  c.ode_units = 32;
  c.embed_dim = 16;
  c.levels = 3;
  c.ae_epochs = 15;
  c.seeds = {1, 2, 3};
  return c;
}

std::string artifact_root(const ExperimentConfig& config) {
  const char* env = std::getenv("SEQLINK_ARTIFACT_DIR");
  if (env != nullptr && *env != '\0') return env;
  return config.artifact_dir;
}

// ---- data preparation ------------------------------------------------------------

namespace {

}  // namespace

PreparedSplits prepare_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
  TimeSeriesBatch full;
  if (cfg.source == "synthetic") {
    full = generate_gaussian_periodic(cfg.samples, cfg.length,
                                      derive_seed(cfg.data_seed, "base", seed));
  } else if (cfg.source == "csv") {
    if (cfg.csv_path.empty()) throw UsageError("source=csv needs csv_path");
    full = load_csv(cfg.csv_path);
  } else {
    throw UsageError("unknown source '" + cfg.source + "' (expected synthetic or csv)");
  }
  if (cfg.sparsity > 0.0) {
    full = apply_sparsity(full, cfg.sparsity, derive_seed(cfg.data_seed, "gaps", seed),
                          cfg.gap_shape);
  }

  PreparedSplits out;
  auto [train, test] = split_shuffled(full, cfg.train_fraction,
                                      derive_seed(cfg.data_seed, "split", seed));
  out.train = std::move(train);
  out.test = std::move(test);

  out.manifest.source = cfg.source;
  out.manifest.length = out.train.length();
  out.manifest.dimension = out.train.features();
  out.manifest.sparsity = cfg.sparsity;
  out.manifest.seed = seed;

  if (cfg.normalize) {
    // Binary labels must stay binary; forecast targets share the feature map.
    const bool norm_targets = cfg.task == TaskKind::regression &&
                              out.train.target_width() == out.train.features();
    NormalizationResult fitted = normalize_01(out.train, norm_targets);
    out.test = normalize_with(out.test, fitted.bounds, norm_targets);
    out.train = std::move(fitted.batch);
    out.manifest.bounds = fitted.bounds;
    out.manifest.warnings = fitted.warnings;
  }
  return out;
}

namespace {

// ---- shared minibatch trainer -------------------------------------------------

struct TrainLoop {
  std::vector<double> loss_curve;
  bool aborted = false;
  std::vector<std::string> warnings;
};

template <typename PredictFn>
TrainLoop minibatch_train(ParameterStore& store, const TimeSeriesBatch& train, TaskKind task,
                          double lr, std::size_t epochs, std::size_t batch_size,
                          std::uint64_t seed, PredictFn&& predict) {
  const std::size_t K = train.samples();
  const std::size_t out_width = train.target_width();
  if (batch_size < 1) throw UsageError("batch_size must be positive");
  if (task == TaskKind::binary_classification && out_width != 1) {
    throw UsageError("classification expects a single target column");
  }

  TrainLoop log;
  AdamOptions opt;
  opt.lr = lr;
  int step = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::vector<std::size_t> order(K);
    std::iota(order.begin(), order.end(), std::size_t{0});
    substream(seed, "order", epoch).shuffle(order);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < K; start += batch_size) {
      const std::size_t stop = std::min(start + batch_size, K);
      const double count = double(stop - start);
      store.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t k = order[b];
        Tape t;
        const Tape::NodeId pred = predict(t, k);
        Tape::NodeId loss;
        if (task == TaskKind::regression) {
          Array target({out_width});
          for (std::size_t j = 0; j < out_width; ++j) target[j] = train.target.at(k, j);
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
        return log;
      }
      adam_step(store, opt, ++step);
      epoch_loss += batch_loss;
    }
    log.loss_curve.push_back(epoch_loss / double(K));
  }
  return log;
}

template <typename F>
auto run_stage(const char* stage, std::uint64_t seed, std::uint64_t config_hash, F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    char hash_hex[17];
    std::snprintf(hash_hex, sizeof hash_hex, "%016llx",
                  static_cast<unsigned long long>(config_hash));
    throw Error("stage '" + std::string(stage) + "' failed for seed " + std::to_string(seed) +
                " (config " + hash_hex + "): " + e.what());
  }
}

void score_outcome(SeedOutcome& outcome, const Array& preds, const TimeSeriesBatch& test,
                   TaskKind task) {
  outcome.test_mse = evaluate_mse(preds, test.target);
  if (task == TaskKind::binary_classification) {
    Array scores({test.samples()});
    Array labels({test.samples()});
    for (std::size_t k = 0; k < test.samples(); ++k) {
      scores[k] = preds.at(k, 0);
      labels[k] = test.target.at(k, 0);
    }
    outcome.test_auc = evaluate_auc(scores, labels);
  }
}

// ---- baselines (rnn / ode_rnn) -----------------------------------------------

SeedOutcome run_baseline_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                              const PreparedSplits& data, const fs::path* seed_dir,
                              std::vector<std::string>* artifact_paths) {
  SeedOutcome outcome;
  outcome.seed = seed;
  outcome.test_mse = std::numeric_limits<double>::quiet_NaN();
  outcome.test_auc = std::numeric_limits<double>::quiet_NaN();

  const std::size_t D = data.train.features();
  ParameterStore store;
  GruCell cell(store, "base/cell", cfg.hidden, D, derive_seed(seed, "cell"));
  std::optional<MlpDynamics> dyn;
  TapeDynamicsFn dynamics;  // stays null for the plain recurrent baseline
  if (cfg.model == ModelKind::ode_rnn) {
    dyn.emplace(store, "base/dyn", cfg.hidden, cfg.ode_units, derive_seed(seed, "dyn"));
    dynamics = dyn->tape_fn();
  }
  OutputHead head(store, "base/head", data.train.target_width(), cfg.hidden, cfg.task,
                  derive_seed(seed, "head"));
  OdeRnnOptions opts;
  opts.method = cfg.method;
  opts.substeps = cfg.substeps;

  const std::uint64_t hash = cfg.hash();
  TrainLoop loop = run_stage("train", seed, hash, [&] {
    return minibatch_train(store, data.train, cfg.task, cfg.lr, cfg.epochs, cfg.batch_size,
                           derive_seed(seed, "train"),
                           [&](Tape& t, std::size_t k) {
                             const auto states =
                                 ode_rnn_forward(t, dynamics, cell, data.train, k, opts);
                             return head.predict(t, states.back());
                           });
  });
  outcome.loss_curve = std::move(loop.loss_curve);
  outcome.warnings = std::move(loop.warnings);
  outcome.aborted = loop.aborted;
  if (outcome.aborted) return outcome;

  run_stage("evaluate", seed, hash, [&] {
    Array preds({data.test.samples(), data.test.target_width()});
    for (std::size_t k = 0; k < data.test.samples(); ++k) {
      Tape t;
      const auto states = ode_rnn_forward(t, dynamics, cell, data.test, k, opts);
      const Array& p = t.value(head.predict(t, states.back()));
      for (std::size_t j = 0; j < p.size(); ++j) preds.at(k, j) = p[j];
    }
    score_outcome(outcome, preds, data.test, cfg.task);
    return 0;
  });

  if (seed_dir != nullptr) {
    const fs::path model_path = *seed_dir / "model.json";
    store.save(model_path.string());
    artifact_paths->push_back(model_path.string());
  }
  return outcome;
}

// ---- seqlink variants ------------------------------------------------------------

struct PipelineArtifacts {
  TrajectoryBank bank;
  PyramidSet train_base;  // built at cfg.levels
  PyramidSet test_base;
  std::vector<double> ae_loss_curve;
};

PipelineArtifacts build_pipeline(const ExperimentConfig& cfg, std::uint64_t seed,
                                 const PreparedSplits& data) {
  PipelineArtifacts art;
  const std::uint64_t hash = cfg.hash();
  const std::size_t D = data.train.features();

  run_stage("train-ae", seed, hash, [&] {
    if (cfg.run_ae_stage) {
      ParameterStore ae_store;
      AutoencoderConfig acfg;
      acfg.latent = cfg.latent;
      acfg.ode_units = cfg.ode_units;
      acfg.epochs = cfg.ae_epochs;
      acfg.lr = cfg.lr;
      acfg.seed = derive_seed(seed, "ae");
      acfg.method = cfg.method;
      acfg.substeps = cfg.substeps;
      OdeAutoencoder ae(ae_store, acfg, D);
      AeTrainLog ae_log = ae.train(data.train);
      art.ae_loss_curve = std::move(ae_log.loss_curve);
      art.bank = ae.export_bank(data.train);
    } else if (!cfg.bank_path.empty()) {
      art.bank = TrajectoryBank::load(cfg.bank_path);
    } else {
      throw UsageError("missing trajectory bank: enable run_ae_stage or set bank_path");
    }
    return 0;
  });

  run_stage("build-pyramid", seed, hash, [&] {
    if (cfg.run_pyramid_stage) {
      ParameterStore pyr_store;
      PyramidScorer scorer(pyr_store, cfg.embed_dim, D, cfg.latent, derive_seed(seed, "pyr"));
      art.train_base =
          build_pyramids(scorer, data.train, art.bank, cfg.levels, cfg.pyramid_variant);
      art.test_base =
          build_pyramids(scorer, data.test, art.bank, cfg.levels, cfg.pyramid_variant);
    } else if (!cfg.train_pyramid_path.empty() && !cfg.test_pyramid_path.empty()) {
      art.train_base = PyramidSet::load(cfg.train_pyramid_path);
      art.test_base = PyramidSet::load(cfg.test_pyramid_path);
    } else {
      throw UsageError(
          "missing pyramids: enable run_pyramid_stage or set train_pyramid_path and "
          "test_pyramid_path");
    }
    return 0;
  });
  return art;
}

/// The (train, test) pyramid pair one model variant consumes, plus its width.
struct VariantContext {
  PyramidSet train;
  PyramidSet test;
  std::size_t levels = 0;
};

VariantContext variant_context(ModelKind model, const ExperimentConfig& cfg,
                               const PipelineArtifacts& art) {
  VariantContext ctx;
  switch (model) {
    case ModelKind::seqlink:
      ctx.train = art.train_base;
      ctx.test = art.test_base;
      ctx.levels = cfg.levels;
      return ctx;
    case ModelKind::seqlink_unified:
      ctx.train = collapse_to_unified(art.train_base, art.bank);
      ctx.test = collapse_to_unified(art.test_base, art.bank);
      ctx.levels = 1;
      return ctx;
    case ModelKind::seqlink_most:
      ctx.train = select_level_only(art.train_base, cfg.levels - 1);
      ctx.test = select_level_only(art.test_base, cfg.levels - 1);
      ctx.levels = 1;
      return ctx;
    case ModelKind::seqlink_least:
      ctx.train = select_level_only(art.train_base, 0);
      ctx.test = select_level_only(art.test_base, 0);
      ctx.levels = 1;
      return ctx;
    default:
      throw UsageError("variant_context: not a seqlink variant");
  }
}

SeedOutcome run_link_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                          const PreparedSplits& data, const PipelineArtifacts& art,
                          const VariantContext& ctx, const fs::path* seed_dir,
                          std::vector<std::string>* artifact_paths) {
  SeedOutcome outcome;
  outcome.seed = seed;
  outcome.test_mse = std::numeric_limits<double>::quiet_NaN();
  outcome.test_auc = std::numeric_limits<double>::quiet_NaN();
  outcome.ae_loss_curve = art.ae_loss_curve;

  const std::uint64_t hash = cfg.hash();
  ParameterStore store;
  LinkOdeConfig lcfg;
  lcfg.hidden = cfg.hidden;
  lcfg.ode_units = cfg.ode_units;
  lcfg.latent = cfg.latent;
  lcfg.levels = ctx.levels;
  lcfg.out_width = data.train.target_width();
  lcfg.task = cfg.task;
  lcfg.lr = cfg.lr;
  lcfg.epochs = cfg.epochs;
  lcfg.batch_size = cfg.batch_size;
  lcfg.seed = derive_seed(seed, "link");
  lcfg.method = cfg.method;
  lcfg.substeps = cfg.substeps;
  LinkOdeModel model(store, lcfg, data.train.features());

  LinkTrainLog loop = run_stage("train", seed, hash, [&] {
    return train_link_ode(model, data.train, ctx.train);
  });
  outcome.loss_curve = std::move(loop.loss_curve);
  outcome.warnings = std::move(loop.warnings);
  outcome.aborted = loop.aborted;
  if (outcome.aborted) return outcome;

  run_stage("evaluate", seed, hash, [&] {
    const Array preds = seqlink_predict(model, data.test, ctx.test);
    score_outcome(outcome, preds, data.test, cfg.task);
    return 0;
  });

  if (seed_dir != nullptr) {
    const fs::path bank_path = *seed_dir / "bank.json";
    const fs::path train_pyr_path = *seed_dir / "train_pyramids.json";
    const fs::path test_pyr_path = *seed_dir / "test_pyramids.json";
    const fs::path model_path = *seed_dir / "model.json";
    art.bank.save(bank_path.string());
    ctx.train.save(train_pyr_path.string());
    ctx.test.save(test_pyr_path.string());
    ModelBundle bundle;
    bundle.store_json = store.to_checkpoint_json();
    bundle.bank_path = bank_path.string();
    bundle.pyramid_path = train_pyr_path.string();
    bundle.config_hash = hash;
    bundle.save(model_path.string());
    for (const fs::path& p : {bank_path, train_pyr_path, test_pyr_path, model_path}) {
      artifact_paths->push_back(p.string());
    }
  }
  return outcome;
}

// ---- aggregation + report writing ---------------------------------------------

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / double(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / double(v.size() - 1));
}

void aggregate(MetricsReport& report) {
  std::vector<double> mses;
  std::vector<double> aucs;
  report.partial = false;
  for (const SeedOutcome& s : report.per_seed) {
    if (s.aborted) {
      report.partial = true;
      continue;
    }
    if (std::isfinite(s.test_mse)) mses.push_back(s.test_mse);
    if (std::isfinite(s.test_auc)) aucs.push_back(s.test_auc);
  }
  report.mean_mse = mean_of(mses);
  report.std_mse = sample_std(mses);
  report.mean_auc = mean_of(aucs);
  report.std_auc = sample_std(aucs);
}

json outcome_to_doc(const SeedOutcome& s) {
  return json{{"seed", s.seed},
              {"aborted", s.aborted},
              {"test_mse", s.test_mse},
              {"test_auc", s.test_auc},
              {"loss_curve", s.loss_curve},
              {"ae_loss_curve", s.ae_loss_curve},
              {"warnings", s.warnings}};
}

json report_to_doc(const MetricsReport& r) {
  json seeds = json::array();
  for (const SeedOutcome& s : r.per_seed) seeds.push_back(outcome_to_doc(s));
  return json{{"run_id", r.run_id},
              {"model", r.model},
              {"config_hash", r.config_hash},
              {"config", json::parse(r.config_json)},
              {"per_seed", std::move(seeds)},
              {"aggregate",
               {{"mse", {{"mean", r.mean_mse}, {"std", r.std_mse}}},
                {"auc", {{"mean", r.mean_auc}, {"std", r.std_auc}}},
                {"partial", r.partial}}},
              {"artifacts", r.artifact_paths},
              {"timing", {{"wall_clock_seconds", r.wall_clock_seconds}}}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write '" + path.string() + "'");
  out << text;
}

void write_run_files(const fs::path& dir, MetricsReport& report) {
  const fs::path config_path = dir / "config.json";
  const fs::path metrics_path = dir / "metrics.json";
  const fs::path curve_path = dir / "loss_curve.csv";
  const fs::path plot_path = dir / "plot.json";
  for (const fs::path& p : {config_path, metrics_path, curve_path, plot_path}) {
    report.artifact_paths.push_back(p.string());
  }

  write_text(config_path, report.config_json);

  std::ostringstream csv;
  csv << "run,seed,stage,epoch,loss\n";
  for (const SeedOutcome& s : report.per_seed) {
    for (std::size_t e = 0; e < s.ae_loss_curve.size(); ++e) {
      csv << report.run_id << ',' << s.seed << ",autoencoder," << e + 1 << ','
          << json(s.ae_loss_curve[e]).dump() << '\n';
    }
    for (std::size_t e = 0; e < s.loss_curve.size(); ++e) {
      csv << report.run_id << ',' << s.seed << ",model," << e + 1 << ','
          << json(s.loss_curve[e]).dump() << '\n';
    }
  }
  write_text(curve_path, csv.str());

  json records = json::array();
  for (const SeedOutcome& s : report.per_seed) {
    for (std::size_t e = 0; e < s.ae_loss_curve.size(); ++e) {
      records.push_back({{"run", report.run_id},
                         {"seed", s.seed},
                         {"series", "ae_loss"},
                         {"index", e + 1},
                         {"value", s.ae_loss_curve[e]}});
    }
    for (std::size_t e = 0; e < s.loss_curve.size(); ++e) {
      records.push_back({{"run", report.run_id},
                         {"seed", s.seed},
                         {"series", "train_loss"},
                         {"index", e + 1},
                         {"value", s.loss_curve[e]}});
    }
    if (!s.aborted) {
      records.push_back({{"run", report.run_id},
                         {"seed", s.seed},
                         {"series", "test_mse"},
                         {"index", 0},
                         {"value", s.test_mse}});
      if (std::isfinite(s.test_auc)) {
        records.push_back({{"run", report.run_id},
                           {"seed", s.seed},
                           {"series", "test_auc"},
                           {"index", 0},
                           {"value", s.test_auc}});
      }
    }
  }
  write_text(plot_path, json{{"format_version", 1}, {"records", std::move(records)}}.dump());

  // metrics.json goes last so it can list every artifact, itself included.
  write_text(metrics_path, report.to_json());
}

}  // namespace

std::string MetricsReport::to_json() const { return report_to_doc(*this).dump(); }

MetricsReport run_training(const ExperimentConfig& config) {
  const auto started = std::chrono::steady_clock::now();
  if (config.seeds.empty()) throw UsageError("run_training: config.seeds is empty");

  MetricsReport report;
  report.run_id = config.run_id();
  report.model = to_string(config.model);
  report.config_hash = config.hash();
  report.config_json = config.to_json();

  std::optional<fs::path> run_dir;
  if (config.write_artifacts) {
    run_dir = fs::path(artifact_root(config)) / report.run_id;
    fs::create_directories(*run_dir);
  }

  for (const std::uint64_t seed : config.seeds) {
    PreparedSplits data = run_stage("prepare-data", seed, report.config_hash,
                                  [&] { return prepare_dataset(config, seed); });
    std::optional<fs::path> seed_dir;
    if (run_dir) {
      seed_dir = *run_dir / ("seed_" + std::to_string(seed));
      fs::create_directories(*seed_dir);
    }
    const fs::path* seed_dir_ptr = seed_dir ? &*seed_dir : nullptr;
    if (is_seqlink_variant(config.model)) {
      const PipelineArtifacts art = build_pipeline(config, seed, data);
      const VariantContext ctx = variant_context(config.model, config, art);
      report.per_seed.push_back(
          run_link_seed(config, seed, data, art, ctx, seed_dir_ptr, &report.artifact_paths));
    } else {
      report.per_seed.push_back(
          run_baseline_seed(config, seed, data, seed_dir_ptr, &report.artifact_paths));
    }
  }

  aggregate(report);
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (run_dir) write_run_files(*run_dir, report);
  return report;
}

PyramidSet collapse_to_unified(const PyramidSet& base, const TrajectoryBank& bank) {
  PyramidSet out;
  out.levels = 1;
  out.weights = default_level_weights(1);
  out.pyramids.reserve(base.pyramids.size());
  for (const ImportancePyramid& pyr : base.pyramids) {
    PyramidLevel merged;
    for (const PyramidLevel& level : pyr.levels) {
      merged.member_positions.insert(merged.member_positions.end(),
                                     level.member_positions.begin(),
                                     level.member_positions.end());
    }
    std::sort(merged.member_positions.begin(), merged.member_positions.end());
    merged.trajectory = Array({bank.length(), bank.latent_dim});
    for (std::size_t m : merged.member_positions) {
      merged.member_ids.push_back(bank.sample_ids[m]);
      for (std::size_t i = 0; i < bank.length(); ++i) {
        for (std::size_t j = 0; j < bank.latent_dim; ++j) {
          merged.trajectory.at(i, j) += bank.trajectories.at(m, i, j);
        }
      }
    }
    if (!merged.member_positions.empty()) {
      for (std::size_t i = 0; i < merged.trajectory.size(); ++i) {
        merged.trajectory[i] /= double(merged.member_positions.size());
      }
    }
    ImportancePyramid collapsed;
    collapsed.query_id = pyr.query_id;
    collapsed.levels.push_back(std::move(merged));
    out.pyramids.push_back(std::move(collapsed));
  }
  return out;
}

PyramidSet select_level_only(const PyramidSet& base, std::size_t level) {
  if (level >= base.levels) {
    throw UsageError("select_level_only: level " + std::to_string(level) + " of " +
                     std::to_string(base.levels));
  }
  PyramidSet out;
  out.levels = 1;
  out.weights = default_level_weights(1);
  out.pyramids.reserve(base.pyramids.size());
  for (const ImportancePyramid& pyr : base.pyramids) {
    ImportancePyramid kept;
    kept.query_id = pyr.query_id;
    kept.levels.push_back(pyr.levels.at(level));
    out.pyramids.push_back(std::move(kept));
  }
  return out;
}

std::string AblationReport::to_json() const {
  json docs = json::array();
  for (const MetricsReport& r : variants) docs.push_back(json::parse(r.to_json()));
  return json{{"format_version", 1}, {"variants", std::move(docs)}}.dump();
}

AblationReport run_ablation(const ExperimentConfig& base) {
  if (!is_seqlink_variant(base.model)) {
    throw UsageError("run_ablation: base config must use a seqlink model");
  }
  const std::array<ModelKind, 4> kinds = {ModelKind::seqlink, ModelKind::seqlink_unified,
                                          ModelKind::seqlink_most, ModelKind::seqlink_least};

  AblationReport out;
  std::vector<ExperimentConfig> variant_cfgs;
  for (const ModelKind kind : kinds) {
    ExperimentConfig cfg = base;
    cfg.model = kind;
    MetricsReport report;
    report.run_id = cfg.run_id();
    report.model = to_string(kind);
    report.config_hash = cfg.hash();
    report.config_json = cfg.to_json();
    out.variants.push_back(std::move(report));
    variant_cfgs.push_back(std::move(cfg));
  }

  const auto started = std::chrono::steady_clock::now();
  ExperimentConfig shared = variant_cfgs[0];  // pipeline stages follow the full model
  for (const std::uint64_t seed : shared.seeds) {
    PreparedSplits data = run_stage("prepare-data", seed, shared.hash(),
                                  [&] { return prepare_dataset(shared, seed); });
    const PipelineArtifacts art = build_pipeline(shared, seed, data);
    for (std::size_t v = 0; v < kinds.size(); ++v) {
      const VariantContext ctx = variant_context(kinds[v], variant_cfgs[v], art);
      std::optional<fs::path> seed_dir;
      if (variant_cfgs[v].write_artifacts) {
        seed_dir = fs::path(artifact_root(variant_cfgs[v])) / out.variants[v].run_id /
                   ("seed_" + std::to_string(seed));
        fs::create_directories(*seed_dir);
      }
      out.variants[v].per_seed.push_back(
          run_link_seed(variant_cfgs[v], seed, data, art, ctx, seed_dir ? &*seed_dir : nullptr,
                        &out.variants[v].artifact_paths));
    }
  }
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  for (std::size_t v = 0; v < kinds.size(); ++v) {
    aggregate(out.variants[v]);
    out.variants[v].wall_clock_seconds = elapsed;
    if (variant_cfgs[v].write_artifacts) {
      const fs::path dir = fs::path(artifact_root(variant_cfgs[v])) / out.variants[v].run_id;
      fs::create_directories(dir);
      write_run_files(dir, out.variants[v]);
    }
  }
  return out;
}

std::string SweepReport::to_json() const {
  json cells_doc = json::array();
  for (const SweepCell& cell : cells) {
    cells_doc.push_back({{"length", cell.length},
                         {"fraction", cell.fraction},
                         {"report", json::parse(cell.report.to_json())}});
  }
  return json{{"format_version", 1}, {"cells", std::move(cells_doc)}}.dump();
}

SweepReport run_sparsity_sweep(const ExperimentConfig& base,
                               const std::vector<std::size_t>& lengths,
                               const std::vector<double>& fractions) {
  if (lengths.empty() || fractions.empty()) {
    throw UsageError("run_sparsity_sweep: need at least one length and one fraction");
  }
  SweepReport out;
  for (const std::size_t n : lengths) {
    for (const double f : fractions) {
      ExperimentConfig cfg = base;
      cfg.length = n;
      cfg.sparsity = f;
      SweepCell cell;
      cell.length = n;
      cell.fraction = f;
      cell.report = run_training(cfg);
      out.cells.push_back(std::move(cell));
    }
  }
  return out;
}

}  // namespace seqlink
