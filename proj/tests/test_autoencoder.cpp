#include <algorithm>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "seqlink/autoencoder.hpp"
#include "seqlink/data.hpp"
#include "seqlink/errors.hpp"
#include "seqlink/rng.hpp"

using namespace seqlink;

namespace {

TimeSeriesBatch sparse_batch(std::size_t K, std::size_t n, std::uint64_t seed) {
  TimeSeriesBatch b = generate_gaussian_periodic(K, n, seed);
  return apply_sparsity(b, 0.25, seed + 1, GapShape::iid);
}

AutoencoderConfig tiny_config() {
  AutoencoderConfig cfg;
  cfg.latent = 3;
  cfg.ode_units = 5;
  cfg.epochs = 4;
  cfg.seed = 9;
  return cfg;
}

}  // namespace

TEST_SUITE("autoencoder") {

TEST_CASE("cut_out removes whole time points and nothing else") {
  const TimeSeriesBatch base = sparse_batch(4, 20, 3);
  const auto [corrupted, plan] = cut_out(base, 3, 77);
  corrupted.validate();
  CHECK(plan.removal_count == 3);
  REQUIRE(plan.removed.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(corrupted.observed_points(k) == base.observed_points(k) - 3);
    CHECK(plan.removed[k].size() == 3);
    // removed indices are sorted, in range, and were observed before
    for (std::size_t j = 0; j < plan.removed[k].size(); ++j) {
      const std::size_t i = plan.removed[k][j];
      CHECK(i < base.length());
      CHECK(base.observed_at(k, i));
      CHECK_FALSE(corrupted.observed_at(k, i));
      if (j > 0) CHECK(plan.removed[k][j - 1] < i);
    }
    // everything else is bit-identical
    for (std::size_t i = 0; i < base.length(); ++i) {
      const bool removed = std::find(plan.removed[k].begin(), plan.removed[k].end(), i) !=
                           plan.removed[k].end();
      if (!removed) {
        CHECK(corrupted.x.at(k, i, 0) == base.x.at(k, i, 0));
        CHECK(corrupted.m.at(k, i, 0) == base.m.at(k, i, 0));
      }
    }
  }
}

TEST_CASE("cut_out is deterministic and zero removals is the identity") {
  const TimeSeriesBatch base = sparse_batch(3, 15, 5);
  const auto [a, plan_a] = cut_out(base, 2, 11);
  const auto [b, plan_b] = cut_out(base, 2, 11);
  CHECK(a.x == b.x);
  CHECK(plan_a.removed == plan_b.removed);
  const auto [c, plan_c] = cut_out(base, 2, 12);
  CHECK(plan_a.removed != plan_c.removed);

  const auto [same, plan0] = cut_out(base, 0, 11);
  CHECK(same.x == base.x);
  CHECK(same.m == base.m);
  for (const auto& r : plan0.removed) CHECK(r.empty());
}

TEST_CASE("cut_out refuses to remove more points than a sample has") {
  TimeSeriesBatch base = generate_gaussian_periodic(2, 6, 1);
  base = apply_sparsity(base, 0.5, 2, GapShape::iid);  // 3 observed per sample
  try {
    cut_out(base, 4, 1);
    FAIL("expected UsageError");
  } catch (const UsageError& e) {
    // names the offending sample
    CHECK(std::string(e.what()).find("s") != std::string::npos);
  }
}

TEST_CASE("encode matches the shared hidden-state recursion exactly") {
  ParameterStore store;
  const AutoencoderConfig cfg = tiny_config();
  const TimeSeriesBatch batch = sparse_batch(2, 12, 8);
  OdeAutoencoder ae(store, cfg, batch.features());

  // rebuild the encoder's cell and dynamics against the same store; the
  // parameters already exist, so these adapters reuse them
  GruCell cell(store, "ae/enc/cell", cfg.latent, batch.features(), 0);
  MlpDynamics dyn(store, "ae/enc/dyn", cfg.latent, cfg.ode_units, 0);
  OdeRnnOptions opts;
  opts.method = cfg.method;
  opts.substeps = cfg.substeps;

  for (std::size_t k = 0; k < batch.samples(); ++k) {
    Tape t1, t2;
    const auto enc = ae.encode(t1, batch, k);
    const auto ref = ode_rnn_forward(t2, dyn.tape_fn(), cell, batch, k, opts);
    REQUIRE(enc.size() == ref.size());
    for (std::size_t i = 0; i < enc.size(); ++i) {
      CHECK(t1.value(enc[i]) == t2.value(ref[i]));
    }
  }
}

TEST_CASE("zero parameters keep the latent trajectory at zero") {
  ParameterStore store;
  const AutoencoderConfig cfg = tiny_config();
  const TimeSeriesBatch batch = sparse_batch(2, 10, 4);
  OdeAutoencoder ae(store, cfg, batch.features());
  for (const std::string& name : store.names()) {
    Array& v = store.mutable_value(name);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.0;
  }
  const Array all = ae.encode_all(batch);
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all.data()[i] == 0.0);
}

TEST_CASE("training reduces reconstruction loss on a learnable dataset") {
  ParameterStore store;
  AutoencoderConfig cfg = tiny_config();
  cfg.epochs = 25;
  cfg.lr = 0.02;
  const TimeSeriesBatch batch = sparse_batch(6, 15, 2);
  OdeAutoencoder ae(store, cfg, batch.features());
  const AeTrainLog log = ae.train(batch);
  REQUIRE(log.loss_curve.size() == 25);
  CHECK(log.final_loss == log.loss_curve.back());
  CHECK(log.final_loss < log.loss_curve.front());
  CHECK(log.warnings.empty());
}

TEST_CASE("training rejects a batch with no observed points") {
  ParameterStore store;
  TimeSeriesBatch empty;
  empty.x = Array({1, 4, 1});
  empty.m = Array({1, 4, 1});
  empty.t = Array({4}, {0.0, 0.25, 0.5, 0.75});
  empty.target = Array({1, 1}, {0.0});
  empty.ids = {"s0"};
  empty.validate();
  OdeAutoencoder ae(store, tiny_config(), 1);
  CHECK_THROWS_AS(ae.train(empty), UsageError);
}

TEST_CASE("all autoencoder parameters live in their own namespace") {
  ParameterStore store;
  OdeAutoencoder ae(store, tiny_config(), 2);
  CHECK(store.size() > 0);
  for (const std::string& name : store.names()) {
    CHECK(name.rfind("ae/", 0) == 0);
  }
}

TEST_CASE("exported bank mirrors the encoded clean batch") {
  ParameterStore store;
  const AutoencoderConfig cfg = tiny_config();
  const TimeSeriesBatch batch = sparse_batch(3, 9, 6);
  OdeAutoencoder ae(store, cfg, batch.features());
  const TrajectoryBank bank = ae.export_bank(batch);
  CHECK(bank.latent_dim == cfg.latent);
  CHECK(bank.samples() == 3);
  CHECK(bank.length() == 9);
  CHECK(bank.sample_ids == batch.ids);
  CHECK(bank.time_grid == batch.t);
  const Array encoded = ae.encode_all(batch);
  CHECK(bank.trajectories == encoded);
  const Array point = bank.trajectory_point(1, 4);
  REQUIRE(point.size() == cfg.latent);
  for (std::size_t d = 0; d < cfg.latent; ++d) {
    CHECK(point[d] == encoded.at(1, 4, d));
  }
}

TEST_CASE("bank json round-trips bit-exactly") {
  ParameterStore store;
  const TimeSeriesBatch batch = sparse_batch(3, 7, 10);
  OdeAutoencoder ae(store, tiny_config(), batch.features());
  const TrajectoryBank bank = ae.export_bank(batch);
  const std::string text = bank.to_json();
  const TrajectoryBank back = TrajectoryBank::from_json(text);
  CHECK(back.trajectories == bank.trajectories);
  CHECK(back.time_grid == bank.time_grid);
  CHECK(back.sample_ids == bank.sample_ids);
  CHECK(back.to_json() == text);

  const std::filesystem::path path =
      std::filesystem::temp_directory_path() / "seqlink-data-tests" / "bank.json";
  std::filesystem::create_directories(path.parent_path());
  bank.save(path.string());
  const TrajectoryBank loaded = TrajectoryBank::load(path.string());
  CHECK(loaded.to_json() == text);
}

TEST_CASE("bank load rejects inconsistent shapes") {
  CHECK_THROWS_AS(TrajectoryBank::from_json("{"), ParseError);
  CHECK_THROWS_AS(TrajectoryBank::from_json("{\"format_version\":2}"), ParseError);
  const std::string bad =
      "{\"format_version\":1,\"latent_dim\":2,\"sample_ids\":[\"a\"],"
      "\"time_grid\":[0.0,0.5],"
      "\"trajectories\":{\"shape\":[1,2,3],\"data\":[0,0,0,0,0,0]}}";
  CHECK_THROWS_AS(TrajectoryBank::from_json(bad), ParseError);
}

}  // TEST_SUITE
