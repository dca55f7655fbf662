// Command-line front end for dataset generation, the staged pipeline
// (auto-encoder -> pyramids -> training), evaluation, ablations, sweeps, and
// statistics.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "seqlink/autoencoder.hpp"
#include "seqlink/errors.hpp"
#include "seqlink/experiment.hpp"
#include "seqlink/metrics.hpp"
#include "seqlink/pyramid.hpp"
#include "seqlink/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace seqlink;

namespace {

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
  bool desk = false;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.path, "JSON config file (defaults apply when omitted)");
  cmd->add_option("--set", args.overrides, "key=value override, repeatable")
      ->take_all()
      ->expected(-1);
  cmd->add_flag("--desk", args.desk, "start from the minutes-scale desk profile");
}

ExperimentConfig resolve_config(const ConfigArgs& args) {
  ExperimentConfig cfg = args.desk ? desk_profile() : ExperimentConfig{};
  if (!args.path.empty()) {
    cfg = ExperimentConfig::load(args.path);
    if (args.desk) {
      std::cerr << "note: --config overrides --desk\n";
    }
  }
  for (const std::string& assignment : args.overrides) cfg.set_override(assignment);
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write '" + path.string() + "'");
  out << text;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string fmt(double v) {
  if (std::isnan(v)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void print_report(const MetricsReport& report) {
  std::cout << "run " << report.run_id << " (" << report.model << ")\n";
  for (const SeedOutcome& s : report.per_seed) {
    std::cout << "  seed " << s.seed;
    if (s.aborted) {
      std::cout << "  ABORTED";
    } else {
      std::cout << "  mse " << fmt(s.test_mse);
      if (std::isfinite(s.test_auc)) std::cout << "  auc " << fmt(s.test_auc);
    }
    if (!s.loss_curve.empty()) {
      std::cout << "  loss " << fmt(s.loss_curve.front()) << " -> "
                << fmt(s.loss_curve.back());
    }
    std::cout << '\n';
  }
  std::cout << "  mean mse " << fmt(report.mean_mse) << " (std " << fmt(report.std_mse) << ")";
  if (std::isfinite(report.mean_auc)) {
    std::cout << "  mean auc " << fmt(report.mean_auc) << " (std " << fmt(report.std_auc)
              << ")";
  }
  if (report.partial) std::cout << "  [partial: some seeds aborted]";
  std::cout << "\n  wall clock " << fmt(report.wall_clock_seconds) << " s\n";
}

void print_report_doc(const json& doc) {
  std::cout << "run " << doc.value("run_id", std::string("?")) << " ("
            << doc.value("model", std::string("?")) << ")\n";
  const json agg = doc.value("aggregate", json::object());
  const json mse = agg.value("mse", json::object());
  const json auc = agg.value("auc", json::object());
  auto num = [](const json& j, const char* key) {
    return j.contains(key) && j[key].is_number() ? j[key].get<double>()
                                                 : std::nan("");
  };
  std::cout << "  mean mse " << fmt(num(mse, "mean")) << " (std " << fmt(num(mse, "std"))
            << ")";
  if (auc.contains("mean") && auc["mean"].is_number()) {
    std::cout << "  mean auc " << fmt(num(auc, "mean")) << " (std " << fmt(num(auc, "std"))
              << ")";
  }
  if (agg.value("partial", false)) std::cout << "  [partial]";
  std::cout << '\n';
}

int cmd_gen_data(const ConfigArgs& cargs, std::uint64_t seed, bool seed_set,
                 const std::string& out_dir) {
  const ExperimentConfig cfg = resolve_config(cargs);
  const std::uint64_t use_seed = seed_set ? seed : cfg.seeds.at(0);
  const PreparedSplits data = prepare_dataset(cfg, use_seed);
  const fs::path dir = out_dir.empty() ? fs::path(artifact_root(cfg)) / "data" : fs::path(out_dir);
  fs::create_directories(dir);
  save_batch((dir / "train.json").string(), data.train);
  save_batch((dir / "test.json").string(), data.test);
  write_file(dir / "manifest.json", data.manifest.to_json());
  std::cout << "wrote " << (dir / "train.json").string() << " (" << data.train.samples()
            << " samples), " << (dir / "test.json").string() << " (" << data.test.samples()
            << " samples), manifest.json\n";
  return 0;
}

int cmd_train_ae(const ConfigArgs& cargs, std::uint64_t seed, bool seed_set,
                 const std::string& out_dir) {
  const ExperimentConfig cfg = resolve_config(cargs);
  const std::uint64_t use_seed = seed_set ? seed : cfg.seeds.at(0);
  const PreparedSplits data = prepare_dataset(cfg, use_seed);

  ParameterStore store;
  AutoencoderConfig acfg;
  acfg.latent = cfg.latent;
  acfg.ode_units = cfg.ode_units;
  acfg.epochs = cfg.ae_epochs;
  acfg.lr = cfg.lr;
  acfg.seed = derive_seed(use_seed, "ae");
  acfg.method = cfg.method;
  acfg.substeps = cfg.substeps;
  OdeAutoencoder ae(store, acfg, data.train.features());
  const AeTrainLog log = ae.train(data.train);
  const TrajectoryBank bank = ae.export_bank(data.train);

  const fs::path dir = out_dir.empty() ? fs::path(artifact_root(cfg)) / "stage" : fs::path(out_dir);
  fs::create_directories(dir);
  bank.save((dir / "bank.json").string());
  store.save((dir / "ae_checkpoint.json").string());
  std::cout << "auto-encoder loss " << fmt(log.loss_curve.empty() ? std::nan("") : log.loss_curve.front())
            << " -> " << fmt(log.final_loss) << " over " << log.loss_curve.size()
            << " epochs\n";
  for (const std::string& w : log.warnings) std::cout << "warning: " << w << '\n';
  std::cout << "wrote " << (dir / "bank.json").string() << " and ae_checkpoint.json\n";
  return 0;
}

int cmd_build_pyramid(const ConfigArgs& cargs, std::uint64_t seed, bool seed_set,
                      const std::string& bank_path, std::size_t levels_flag, bool levels_set,
                      const std::string& out_dir) {
  ExperimentConfig cfg = resolve_config(cargs);
  if (levels_set) cfg.levels = levels_flag;
  const std::uint64_t use_seed = seed_set ? seed : cfg.seeds.at(0);
  const PreparedSplits data = prepare_dataset(cfg, use_seed);
  const TrajectoryBank bank = TrajectoryBank::load(bank_path);

  ParameterStore store;
  PyramidScorer scorer(store, cfg.embed_dim, data.train.features(), cfg.latent,
                       derive_seed(use_seed, "pyr"));
  const PyramidSet train_set =
      build_pyramids(scorer, data.train, bank, cfg.levels, cfg.pyramid_variant);
  const PyramidSet test_set =
      build_pyramids(scorer, data.test, bank, cfg.levels, cfg.pyramid_variant);

  const fs::path dir = out_dir.empty() ? fs::path(artifact_root(cfg)) / "stage" : fs::path(out_dir);
  fs::create_directories(dir);
  train_set.save((dir / "train_pyramids.json").string());
  test_set.save((dir / "test_pyramids.json").string());
  store.save((dir / "pyr_checkpoint.json").string());
  std::cout << "built " << train_set.pyramids.size() << " train and " << test_set.pyramids.size()
            << " test pyramids at " << cfg.levels << " levels\nwrote "
            << (dir / "train_pyramids.json").string() << " and test_pyramids.json\n";
  return 0;
}

int cmd_train(const ConfigArgs& cargs) {
  const ExperimentConfig cfg = resolve_config(cargs);
  const MetricsReport report = run_training(cfg);
  print_report(report);
  if (cfg.write_artifacts) {
    std::cout << "artifacts under " << (fs::path(artifact_root(cfg)) / report.run_id).string()
              << '\n';
  }
  return 0;
}

int cmd_eval(const ConfigArgs& cargs, const std::string& model_path,
             const std::string& pyramid_path, std::uint64_t seed, bool seed_set) {
  const ExperimentConfig cfg = resolve_config(cargs);
  const std::uint64_t use_seed = seed_set ? seed : cfg.seeds.at(0);
  const PreparedSplits data = prepare_dataset(cfg, use_seed);

  Array preds;
  if (is_seqlink_variant(cfg.model)) {
    const ModelBundle bundle = ModelBundle::load(model_path);
    if (pyramid_path.empty()) {
      throw UsageError("eval: seqlink models need --pyramids (set for the evaluated split)");
    }
    const PyramidSet pyramids = PyramidSet::load(pyramid_path);
    ParameterStore store = ParameterStore::from_checkpoint_json(bundle.store_json);
    LinkOdeConfig lcfg;
    lcfg.hidden = cfg.hidden;
    lcfg.ode_units = cfg.ode_units;
    lcfg.latent = cfg.latent;
    lcfg.levels = pyramids.levels;
    lcfg.out_width = data.test.target_width();
    lcfg.task = cfg.task;
    lcfg.method = cfg.method;
    lcfg.substeps = cfg.substeps;
    const LinkOdeModel model(store, lcfg, data.test.features());
    preds = seqlink_predict(model, data.test, pyramids);
  } else {
    ParameterStore store = ParameterStore::load(model_path);
    GruCell cell(store, "base/cell", cfg.hidden, data.test.features(), 0);
    std::optional<MlpDynamics> dyn;
    TapeDynamicsFn dynamics;
    if (cfg.model == ModelKind::ode_rnn) {
      dyn.emplace(store, "base/dyn", cfg.hidden, cfg.ode_units, 0);
      dynamics = dyn->tape_fn();
    }
    OutputHead head(store, "base/head", data.test.target_width(), cfg.hidden, cfg.task, 0);
    OdeRnnOptions opts;
    opts.method = cfg.method;
    opts.substeps = cfg.substeps;
    preds = Array({data.test.samples(), data.test.target_width()});
    for (std::size_t k = 0; k < data.test.samples(); ++k) {
      Tape t;
      const auto states = ode_rnn_forward(t, dynamics, cell, data.test, k, opts);
      const Array& p = t.value(head.predict(t, states.back()));
      for (std::size_t j = 0; j < p.size(); ++j) preds.at(k, j) = p[j];
    }
  }

  std::cout << "test mse " << fmt(evaluate_mse(preds, data.test.target)) << '\n';
  if (cfg.task == TaskKind::binary_classification) {
    Array scores({data.test.samples()});
    Array labels({data.test.samples()});
    for (std::size_t k = 0; k < data.test.samples(); ++k) {
      scores[k] = preds.at(k, 0);
      labels[k] = data.test.target.at(k, 0);
    }
    std::cout << "test auc " << fmt(evaluate_auc(scores, labels)) << '\n';
  }
  return 0;
}

int cmd_ablate(const ConfigArgs& cargs, const std::string& out_path) {
  const ExperimentConfig cfg = resolve_config(cargs);
  const AblationReport report = run_ablation(cfg);
  for (const MetricsReport& variant : report.variants) print_report(variant);
  const fs::path out = out_path.empty()
                           ? fs::path(artifact_root(cfg)) / "ablation.json"
                           : fs::path(out_path);
  write_file(out, report.to_json());
  std::cout << "wrote " << out.string() << '\n';
  return 0;
}

int cmd_sweep(const ConfigArgs& cargs, std::vector<std::size_t> lengths,
              std::vector<double> fractions, const std::string& out_path) {
  const ExperimentConfig cfg = resolve_config(cargs);
  if (lengths.empty()) lengths = {25, 50, 100};
  if (fractions.empty()) fractions = {0.1, 0.2, 0.3, 0.4};
  const SweepReport report = run_sparsity_sweep(cfg, lengths, fractions);
  std::printf("%8s %10s %12s %12s\n", "length", "sparsity", "mean mse", "std");
  for (const SweepCell& cell : report.cells) {
    std::printf("%8zu %10.2f %12s %12s\n", cell.length, cell.fraction,
                fmt(cell.report.mean_mse).c_str(), fmt(cell.report.std_mse).c_str());
  }
  const fs::path out = out_path.empty() ? fs::path(artifact_root(cfg)) / "sweep.json"
                                        : fs::path(out_path);
  write_file(out, report.to_json());
  std::cout << "wrote " << out.string() << '\n';
  return 0;
}

int cmd_report(const std::string& in_path) {
  json doc;
  try {
    doc = json::parse(slurp(in_path));
  } catch (const json::exception& e) {
    throw ParseError(in_path + ": " + e.what());
  }
  if (doc.contains("cells")) {
    std::printf("%8s %10s %12s %12s\n", "length", "sparsity", "mean mse", "std");
    for (const json& cell : doc["cells"]) {
      const json rep = cell.value("report", json::object());
      const json mse = rep.value("aggregate", json::object()).value("mse", json::object());
      const double mean = mse.contains("mean") && mse["mean"].is_number()
                              ? mse["mean"].get<double>()
                              : std::nan("");
      const double sd = mse.contains("std") && mse["std"].is_number()
                            ? mse["std"].get<double>()
                            : std::nan("");
      std::printf("%8zu %10.2f %12s %12s\n", cell.value("length", std::size_t{0}),
                  cell.value("fraction", 0.0), fmt(mean).c_str(), fmt(sd).c_str());
    }
  } else if (doc.contains("variants")) {
    for (const json& variant : doc["variants"]) print_report_doc(variant);
  } else {
    print_report_doc(doc);
  }
  return 0;
}

int cmd_ranktest(const std::vector<double>& a, const std::vector<double>& b) {
  const double p = rank_sum_test(a, b);
  std::cout << "two-sided rank-sum p = " << fmt(p) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continuous-time sequence modeling over irregular series"};
  app.require_subcommand(1);

  ConfigArgs gen_args, ae_args, pyr_args, train_args, eval_args, ablate_args, sweep_args;
  std::uint64_t seed = 0;
  std::string out_dir, bank_path, model_path, pyramid_path, in_path, out_path;
  std::size_t levels_flag = 0;
  std::vector<std::size_t> lengths;
  std::vector<double> fractions, rank_a, rank_b;

  CLI::App* gen = app.add_subcommand("gen-data", "generate or load a dataset and write the splits");
  add_config_options(gen, gen_args);
  CLI::Option* gen_seed = gen->add_option("--seed", seed, "dataset seed (default: first config seed)");
  gen->add_option("--out", out_dir, "output directory");

  CLI::App* ae = app.add_subcommand("train-ae", "train the auto-encoder and export the trajectory bank");
  add_config_options(ae, ae_args);
  CLI::Option* ae_seed = ae->add_option("--seed", seed, "pipeline seed (default: first config seed)");
  ae->add_option("--out", out_dir, "output directory");

  CLI::App* pyr = app.add_subcommand("build-pyramid", "score a dataset against a bank and sort pyramids");
  add_config_options(pyr, pyr_args);
  CLI::Option* pyr_seed = pyr->add_option("--seed", seed, "pipeline seed (default: first config seed)");
  pyr->add_option("--bank", bank_path, "trajectory bank JSON")->required();
  CLI::Option* pyr_levels = pyr->add_option("--levels", levels_flag, "pyramid level count L");
  pyr->add_option("--out", out_dir, "output directory");

  CLI::App* train = app.add_subcommand("train", "run the full training pipeline and report metrics");
  add_config_options(train, train_args);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a saved model on the test split");
  add_config_options(eval, eval_args);
  eval->add_option("--model", model_path, "model bundle / checkpoint JSON")->required();
  eval->add_option("--pyramids", pyramid_path, "pyramid set for the evaluated split (seqlink)");
  CLI::Option* eval_seed = eval->add_option("--seed", seed, "dataset seed (default: first config seed)");

  CLI::App* ablate = app.add_subcommand("ablate", "run the full model and its context ablations");
  add_config_options(ablate, ablate_args);
  ablate->add_option("--out", out_path, "report path (default: <artifacts>/ablation.json)");

  CLI::App* sweep = app.add_subcommand("sweep", "grid over sequence lengths and sparsity fractions");
  add_config_options(sweep, sweep_args);
  sweep->add_option("--lengths", lengths, "sequence lengths")->delimiter(',');
  sweep->add_option("--fractions", fractions, "sparsity fractions")->delimiter(',');
  sweep->add_option("--out", out_path, "report path (default: <artifacts>/sweep.json)");

  CLI::App* report = app.add_subcommand("report", "pretty-print a metrics/sweep/ablation JSON");
  report->add_option("--in", in_path, "report JSON path")->required();

  CLI::App* rank = app.add_subcommand("ranktest", "two-sided Wilcoxon rank-sum test");
  rank->add_option("--a", rank_a, "first sample, comma-separated")->required()->delimiter(',');
  rank->add_option("--b", rank_b, "second sample, comma-separated")->required()->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gen_args, seed, !gen_seed->empty(), out_dir);
    if (ae->parsed()) return cmd_train_ae(ae_args, seed, !ae_seed->empty(), out_dir);
    if (pyr->parsed()) {
      return cmd_build_pyramid(pyr_args, seed, !pyr_seed->empty(), bank_path, levels_flag,
                               !pyr_levels->empty(), out_dir);
    }
    if (train->parsed()) return cmd_train(train_args);
    if (eval->parsed()) return cmd_eval(eval_args, model_path, pyramid_path, seed, !eval_seed->empty());
    if (ablate->parsed()) return cmd_ablate(ablate_args, out_path);
    if (sweep->parsed()) return cmd_sweep(sweep_args, lengths, fractions, out_path);
    if (report->parsed()) return cmd_report(in_path);
    if (rank->parsed()) return cmd_ranktest(rank_a, rank_b);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
