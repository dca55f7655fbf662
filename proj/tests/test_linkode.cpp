#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "seqlink/data.hpp"
#include "seqlink/errors.hpp"
#include "seqlink/linkode.hpp"
#include "seqlink/rng.hpp"
#include "seqlink/tape.hpp"
#include "support/fd_check.hpp"

using namespace seqlink;

namespace {

LinkOdeConfig tiny_config(std::size_t levels = 2) {
  LinkOdeConfig cfg;
  cfg.hidden = 4;
  cfg.ode_units = 5;
  cfg.latent = 3;
  cfg.levels = levels;
  cfg.out_width = 1;
  cfg.epochs = 5;
  cfg.batch_size = 4;
  cfg.seed = 7;
  return cfg;
}

TrajectoryBank random_bank(std::size_t K, std::size_t n, std::size_t latent,
                           std::uint64_t seed) {
  TrajectoryBank bank;
  bank.latent_dim = latent;
  bank.time_grid = Array({n});
  for (std::size_t i = 0; i < n; ++i) bank.time_grid[i] = double(i) / double(n);
  bank.trajectories = Array({K, n, latent});
  Rng rng(seed);
  for (std::size_t i = 0; i < bank.trajectories.size(); ++i) {
    bank.trajectories.data()[i] = rng.gaussian();
  }
  for (std::size_t k = 0; k < K; ++k) bank.sample_ids.push_back("b" + std::to_string(k));
  return bank;
}

// A pyramid whose levels hold hand-chosen aggregate trajectories.
ImportancePyramid pyramid_from_trajectories(const std::string& query_id,
                                            const std::vector<Array>& trajectories) {
  ImportancePyramid pyr;
  pyr.query_id = query_id;
  for (const Array& traj : trajectories) {
    PyramidLevel level;
    level.trajectory = traj;
    pyr.levels.push_back(level);
  }
  return pyr;
}

ImportancePyramid random_pyramid(const std::string& query_id, std::size_t levels,
                                 std::size_t n, std::size_t latent, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Array> trajs;
  for (std::size_t j = 0; j < levels; ++j) {
    Array t({n, latent});
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.gaussian();
    trajs.push_back(t);
  }
  return pyramid_from_trajectories(query_id, trajs);
}

TimeSeriesBatch gapped_batch(std::size_t K, std::size_t n, std::uint64_t seed) {
  TimeSeriesBatch b = generate_gaussian_periodic(K, n, seed);
  return apply_sparsity(b, 0.3, seed + 1, GapShape::iid);
}

void zero_param(ParameterStore& store, const std::string& name) {
  Array& v = store.mutable_value(name);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.0;
}

bool bitwise_equal(const Array& a, const Array& b) {
  return a.same_shape(b) &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_SUITE("linkode") {

TEST_CASE("level_combine scales each level row by its weight") {
  const std::size_t n = 3, latent = 2;
  Array t0({n, latent}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
  Array t1({n, latent}, {10.0, 20.0, 30.0, 40.0, 50.0, 60.0});
  const ImportancePyramid pyr = pyramid_from_trajectories("q", {t0, t1});

  SUBCASE("zero weights give the zero matrix") {
    const Array zero({2}, {0.0, 0.0});
    const Array p = level_combine(zero, pyr, 1);
    REQUIRE(p.rows() == 2);
    REQUIRE(p.cols() == latent);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p.data()[i] == 0.0);
  }

  SUBCASE("unit weight reproduces the level row") {
    const Array w({2}, {1.0, 1.0});
    const Array p = level_combine(w, pyr, 2);
    CHECK(p.at(0, 0) == 5.0);
    CHECK(p.at(0, 1) == 6.0);
    CHECK(p.at(1, 0) == 50.0);
    CHECK(p.at(1, 1) == 60.0);
  }

  SUBCASE("doubling one weight doubles only its row") {
    const Array w({2}, {1.0, 2.0});
    const Array p = level_combine(w, pyr, 0);
    CHECK(p.at(0, 0) == 1.0);
    CHECK(p.at(1, 0) == 20.0);
    CHECK(p.at(1, 1) == 40.0);
  }

  SUBCASE("bad weight count or time index is rejected") {
    const Array w({3}, {1.0, 1.0, 1.0});
    CHECK_THROWS_AS(level_combine(w, pyr, 0), ShapeError);
    const Array ok({2}, {1.0, 1.0});
    CHECK_THROWS_AS(level_combine(ok, pyr, 9), UsageError);
  }
}

TEST_CASE("with zero level weights and zero gap map the model is an ode-rnn") {
  ParameterStore store;
  const LinkOdeConfig cfg = tiny_config(2);
  const TimeSeriesBatch batch = gapped_batch(3, 10, 21);
  LinkOdeModel model(store, cfg, batch.features());
  zero_param(store, "linkode/levels/w");
  zero_param(store, "linkode/gap/Wc");

  // same cell/dynamics parameters, context replaced by a zero pad
  GruCell cell(store, "linkode/cell", cfg.hidden,
               cfg.levels * cfg.latent + batch.features(), 0);
  MlpDynamics dyn(store, "linkode/dyn", cfg.hidden, cfg.ode_units, 0);
  OutputHead head(store, "linkode/head", cfg.out_width, cfg.hidden, cfg.task, 0);
  OdeRnnOptions opts;
  opts.method = cfg.method;
  opts.substeps = cfg.substeps;
  opts.context_pad = cfg.levels * cfg.latent;

  for (std::size_t k = 0; k < batch.samples(); ++k) {
    const ImportancePyramid pyr =
        random_pyramid(batch.ids[k], cfg.levels, batch.length(), cfg.latent, 100 + k);
    Tape t1, t2;
    const auto linked = model.forward(t1, batch, k, pyr);
    const auto plain = ode_rnn_forward(t2, dyn.tape_fn(), cell, batch, k, opts);
    REQUIRE(linked.size() == plain.size());
    for (std::size_t i = 0; i < linked.size(); ++i) {
      CHECK(bitwise_equal(t1.value(linked[i]), t2.value(plain[i])));
    }
    const Array from_link = t1.value(head.predict(t1, linked.back()));
    const Array from_plain = t2.value(head.predict(t2, plain.back()));
    CHECK(bitwise_equal(from_link, from_plain));
  }
}

TEST_CASE("nonzero context changes the state during gaps") {
  ParameterStore store;
  const LinkOdeConfig cfg = tiny_config(2);
  // one observation at the start, then a long gap
  TimeSeriesBatch batch;
  const std::size_t n = 6;
  batch.x = Array({1, n, 1});
  batch.m = Array({1, n, 1});
  batch.t = Array({n});
  for (std::size_t i = 0; i < n; ++i) batch.t[i] = double(i) / double(n);
  batch.x.at(0, 0, 0) = 0.8;
  batch.m.at(0, 0, 0) = 1.0;
  batch.target = Array({1, 1}, {0.5});
  batch.ids = {"q0"};
  batch.validate();

  LinkOdeModel model(store, cfg, 1);
  const ImportancePyramid pyr = random_pyramid("q0", 2, n, cfg.latent, 5);

  Tape with_ctx;
  const auto states = model.forward(with_ctx, batch, 0, pyr);

  zero_param(store, "linkode/levels/w");
  zero_param(store, "linkode/gap/Wc");
  Tape without_ctx;
  const auto plain = model.forward(without_ctx, batch, 0, pyr);

  // the gap-fusion injection differs at every unobserved index
  bool differs = false;
  for (std::size_t i = 1; i < n; ++i) {
    if (!bitwise_equal(with_ctx.value(states[i]), without_ctx.value(plain[i]))) {
      differs = true;
    }
  }
  CHECK(differs);
}

TEST_CASE("a fully observed sample never exercises the gap parameters") {
  ParameterStore store;
  const LinkOdeConfig cfg = tiny_config(2);
  const TimeSeriesBatch batch = generate_gaussian_periodic(1, 8, 33);  // no gaps
  LinkOdeModel model(store, cfg, 1);
  const ImportancePyramid pyr = random_pyramid(batch.ids[0], 2, 8, cfg.latent, 6);

  store.zero_grad();
  Tape t;
  const Tape::NodeId pred = model.predict_node(t, batch, 0, pyr);
  const Tape::NodeId loss = mse_loss(t, pred, Array({1}, {batch.target.at(0, 0)}));
  t.backward(loss);

  const Array wc_grad = store.grad("linkode/gap/Wc");
  for (std::size_t i = 0; i < wc_grad.size(); ++i) CHECK(wc_grad[i] == 0.0);
  const Array g_grad = store.grad("linkode/gap/g");
  CHECK(g_grad[0] == 0.0);
  // the level weights DO receive gradient through the observed-point context
  const Array w_grad = store.grad("linkode/levels/w");
  bool any = false;
  for (std::size_t i = 0; i < w_grad.size(); ++i) {
    if (w_grad[i] != 0.0) any = true;
  }
  CHECK(any);
}

TEST_CASE("gradients match finite differences through the full model") {
  ParameterStore store;
  LinkOdeConfig cfg = tiny_config(2);
  cfg.hidden = 3;
  cfg.ode_units = 4;
  cfg.latent = 2;
  const TimeSeriesBatch batch = gapped_batch(1, 6, 55);
  LinkOdeModel model(store, cfg, 1);
  const ImportancePyramid pyr = random_pyramid(batch.ids[0], 2, 6, cfg.latent, 8);

  const Array target({1}, {batch.target.at(0, 0)});
  auto loss_value = [&]() {
    Tape t;
    const Tape::NodeId loss = mse_loss(t, model.predict_node(t, batch, 0, pyr), target);
    return t.value(loss)[0];
  };
  auto grad_pass = [&]() {
    Tape t;
    const Tape::NodeId loss = mse_loss(t, model.predict_node(t, batch, 0, pyr), target);
    t.backward(loss);
  };
  const testsupport::FdReport rep = testsupport::fd_check(store, loss_value, grad_pass);
  INFO("worst ", rep.worst, " analytic ", rep.analytic, " numeric ", rep.numeric);
  CHECK(rep.max_rel_err < 1e-3);
}

TEST_CASE("pyramids must cover the batch and match its shape") {
  ParameterStore store;
  const LinkOdeConfig cfg = tiny_config(2);
  const TimeSeriesBatch batch = gapped_batch(2, 6, 17);
  LinkOdeModel model(store, cfg, 1);

  // wrong level count
  const ImportancePyramid shallow = random_pyramid(batch.ids[0], 1, 6, cfg.latent, 9);
  Tape t;
  CHECK_THROWS_AS(model.forward(t, batch, 0, shallow), UsageError);
  // wrong query id
  const ImportancePyramid misnamed = random_pyramid("nobody", 2, 6, cfg.latent, 9);
  CHECK_THROWS_AS(model.forward(t, batch, 0, misnamed), UsageError);
  // wrong grid length
  const ImportancePyramid short_grid = random_pyramid(batch.ids[0], 2, 5, cfg.latent, 9);
  CHECK_THROWS_AS(model.forward(t, batch, 0, short_grid), UsageError);

  // seqlink_predict refuses a batch sample with no pyramid at all
  PyramidSet set;
  set.levels = 2;
  set.weights = default_level_weights(2);
  set.pyramids = {random_pyramid(batch.ids[0], 2, 6, cfg.latent, 10)};
  try {
    seqlink_predict(model, batch, set);
    FAIL("expected UsageError");
  } catch (const UsageError& e) {
    CHECK(std::string(e.what()).find(batch.ids[1]) != std::string::npos);
  }
}

TEST_CASE("training lowers the loss and leaves the pyramids untouched") {
  ParameterStore store;
  LinkOdeConfig cfg = tiny_config(2);
  cfg.epochs = 12;
  cfg.batch_size = 3;
  const TimeSeriesBatch batch = gapped_batch(6, 10, 71);

  PyramidSet set;
  set.levels = cfg.levels;
  set.weights = default_level_weights(cfg.levels);
  for (std::size_t k = 0; k < batch.samples(); ++k) {
    set.pyramids.push_back(
        random_pyramid(batch.ids[k], cfg.levels, batch.length(), cfg.latent, 200 + k));
  }
  const std::string frozen = set.to_json();

  LinkOdeModel model(store, cfg, batch.features());
  const LinkTrainLog log = train_link_ode(model, batch, set);
  REQUIRE(log.loss_curve.size() == 12);
  CHECK_FALSE(log.aborted);
  CHECK(log.final_loss < log.loss_curve.front());
  CHECK(set.to_json() == frozen);  // cross trajectories are read-only

  // every parameter the model owns lives under its namespace
  for (const std::string& name : store.names()) {
    CHECK(name.rfind("linkode/", 0) == 0);
  }
}

TEST_CASE("training is deterministic") {
  const TimeSeriesBatch batch = gapped_batch(5, 8, 81);
  PyramidSet set;
  set.levels = 2;
  set.weights = default_level_weights(2);
  for (std::size_t k = 0; k < batch.samples(); ++k) {
    set.pyramids.push_back(random_pyramid(batch.ids[k], 2, 8, 3, 300 + k));
  }
  auto run = [&]() {
    ParameterStore store;
    LinkOdeConfig cfg = tiny_config(2);
    cfg.epochs = 4;
    LinkOdeModel model(store, cfg, batch.features());
    train_link_ode(model, batch, set);
    return store.to_checkpoint_json();
  };
  CHECK(run() == run());
}

TEST_CASE("model bundles round-trip") {
  ParameterStore store;
  const LinkOdeConfig cfg = tiny_config(2);
  LinkOdeModel model(store, cfg, 1);
  ModelBundle bundle;
  bundle.store_json = store.to_checkpoint_json();
  bundle.bank_path = "bank.json";
  bundle.pyramid_path = "train_pyramids.json";
  bundle.config_hash = 0xdeadbeefcafef00dULL;
  const std::string text = bundle.to_json();
  const ModelBundle back = ModelBundle::from_json(text);
  // the embedded checkpoint is re-serialized, so compare restored values
  const ParameterStore restored = ParameterStore::from_checkpoint_json(back.store_json);
  for (const std::string& name : store.names()) {
    CHECK(restored.value(name) == store.value(name));
  }
  CHECK(back.bank_path == bundle.bank_path);
  CHECK(back.pyramid_path == bundle.pyramid_path);
  CHECK(back.config_hash == bundle.config_hash);

  const std::filesystem::path path =
      std::filesystem::temp_directory_path() / "seqlink-data-tests" / "bundle.json";
  std::filesystem::create_directories(path.parent_path());
  bundle.save(path.string());
  CHECK(ModelBundle::load(path.string()).to_json() == text);
}

}  // TEST_SUITE
