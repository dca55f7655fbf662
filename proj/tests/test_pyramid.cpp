#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "seqlink/data.hpp"
#include "seqlink/errors.hpp"
#include "seqlink/pyramid.hpp"
#include "seqlink/rng.hpp"
#include "support/pyramid_oracle.hpp"

using namespace seqlink;

namespace {

TrajectoryBank make_bank(std::size_t K, std::size_t n, std::size_t latent,
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

// Bank whose entries have constant trajectories, so under an identity
// trajectory embedding each entry's score is exactly its constant.
TrajectoryBank constant_bank(const std::vector<double>& constants, std::size_t n) {
  TrajectoryBank bank;
  bank.latent_dim = 1;
  bank.time_grid = Array({n});
  for (std::size_t i = 0; i < n; ++i) bank.time_grid[i] = double(i) / double(n);
  bank.trajectories = Array({constants.size(), n, 1});
  for (std::size_t k = 0; k < constants.size(); ++k) {
    for (std::size_t i = 0; i < n; ++i) bank.trajectories.at(k, i, 0) = constants[k];
    bank.sample_ids.push_back("b" + std::to_string(k));
  }
  return bank;
}

// Scorer rigged so score(query, entry k) == the bank entry's constant value:
// value embedding zeroed, trajectory embedding identity, theta = (0, 1).
PyramidScorer rigged_scorer(ParameterStore& store) {
  PyramidScorer scorer(store, 1, 1, 1, 0);
  store.mutable_value("pyr/embed_x/W")[0] = 0.0;
  store.mutable_value("pyr/embed_x/b")[0] = 0.0;
  store.mutable_value("pyr/embed_u/W")[0] = 1.0;
  store.mutable_value("pyr/embed_u/b")[0] = 0.0;
  Array& theta = store.mutable_value("pyr/score");
  theta[0] = 0.0;
  theta[1] = 1.0;
  return scorer;
}

TimeSeriesBatch query_batch(std::size_t K, std::size_t n, std::uint64_t seed,
                            const std::string& id_prefix = "q") {
  TimeSeriesBatch b = generate_gaussian_periodic(K, n, seed);
  for (std::size_t k = 0; k < K; ++k) b.ids[k] = id_prefix + std::to_string(k);
  return b;
}

std::vector<std::size_t> all_positions(std::size_t K) {
  std::vector<std::size_t> out(K);
  for (std::size_t i = 0; i < K; ++i) out[i] = i;
  return out;
}

}  // namespace

TEST_SUITE("pyramid") {

TEST_CASE("identical bank entries get a uniform attention row") {
  ParameterStore store;
  const PyramidScorer scorer = rigged_scorer(store);
  const TrajectoryBank bank = constant_bank({0.7, 0.7, 0.7, 0.7}, 4);
  const TimeSeriesBatch queries = query_batch(2, 4, 5);
  const ImportanceMatrix m = attention_scores(scorer, queries, bank);
  REQUIRE(m.alpha.rows() == 2);
  REQUIRE(m.alpha.cols() == 4);
  for (std::size_t q = 0; q < 2; ++q) {
    for (std::size_t c = 0; c < 4; ++c) CHECK(m.alpha.at(q, c) == 0.25);
    CHECK(m.candidates[q].size() == 4);
  }
}

TEST_CASE("a two-entry score gap of ln 3 yields weights 1/4 and 3/4") {
  ParameterStore store;
  const PyramidScorer scorer = rigged_scorer(store);
  const TrajectoryBank bank = constant_bank({0.0, std::log(3.0)}, 4);
  const TimeSeriesBatch queries = query_batch(1, 4, 8);
  const ImportanceMatrix m = attention_scores(scorer, queries, bank);
  CHECK(m.alpha.at(0, 0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(m.alpha.at(0, 1) == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("rows are softmax distributions over the candidate set") {
  ParameterStore store;
  const PyramidScorer scorer(store, 3, 1, 2, 42);
  const TrajectoryBank bank = make_bank(5, 6, 2, 7);
  const TimeSeriesBatch queries = query_batch(4, 6, 11);
  const ImportanceMatrix m = attention_scores(scorer, queries, bank);
  for (std::size_t q = 0; q < 4; ++q) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      CHECK(m.alpha.at(q, c) > 0.0);
      sum += m.alpha.at(q, c);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("a query that is also a bank entry is excluded from its own row") {
  ParameterStore store;
  const PyramidScorer scorer(store, 2, 1, 2, 3);
  TrajectoryBank bank = make_bank(4, 5, 2, 9);
  TimeSeriesBatch queries = query_batch(2, 5, 13);
  queries.ids[0] = bank.sample_ids[2];  // shares an id with bank entry 2
  const ImportanceMatrix m = attention_scores(scorer, queries, bank);
  CHECK(m.alpha.at(0, 2) == 0.0);
  CHECK(m.candidates[0].size() == 3);
  CHECK(std::find(m.candidates[0].begin(), m.candidates[0].end(), 2) ==
        m.candidates[0].end());
  double sum = 0.0;
  for (std::size_t c = 0; c < 4; ++c) sum += m.alpha.at(0, c);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  // the second query keeps all four candidates
  CHECK(m.candidates[1].size() == 4);
}

TEST_CASE("a single-entry bank matching the query id has no candidates") {
  ParameterStore store;
  const PyramidScorer scorer(store, 2, 1, 2, 3);
  const TrajectoryBank bank = make_bank(1, 5, 2, 9);
  TimeSeriesBatch queries = query_batch(1, 5, 13);
  queries.ids[0] = bank.sample_ids[0];
  CHECK_THROWS_AS(attention_scores(scorer, queries, bank), UsageError);
}

TEST_CASE("an unobserved query still gets a valid row") {
  ParameterStore store;
  const PyramidScorer scorer(store, 2, 1, 2, 21);
  const TrajectoryBank bank = make_bank(3, 4, 2, 5);
  TimeSeriesBatch queries = query_batch(1, 4, 2);
  for (std::size_t i = 0; i < queries.x.size(); ++i) {
    queries.x.data()[i] = 0.0;
    queries.m.data()[i] = 0.0;
  }
  const Array pooled = scorer.pooled_value_embedding(queries, 0);
  for (std::size_t i = 0; i < pooled.size(); ++i) CHECK(pooled[i] == 0.0);
  const ImportanceMatrix m = attention_scores(scorer, queries, bank);
  double sum = 0.0;
  for (std::size_t c = 0; c < 3; ++c) sum += m.alpha.at(0, c);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("shifting the query-side embedding leaves attention unchanged") {
  ParameterStore store;
  const PyramidScorer scorer(store, 3, 1, 2, 31);
  const TrajectoryBank bank = make_bank(5, 6, 2, 17);
  const TimeSeriesBatch queries = query_batch(3, 6, 19);
  const ImportanceMatrix before = attention_scores(scorer, queries, bank);
  Array& bias = store.mutable_value("pyr/embed_x/b");
  for (std::size_t i = 0; i < bias.size(); ++i) bias[i] += 7.5;
  const ImportanceMatrix after = attention_scores(scorer, queries, bank);
  for (std::size_t q = 0; q < 3; ++q) {
    for (std::size_t c = 0; c < 5; ++c) {
      CHECK(after.alpha.at(q, c) ==
            doctest::Approx(before.alpha.at(q, c)).epsilon(1e-12));
    }
  }
}

TEST_CASE("hand-traced mean splits") {
  const TrajectoryBank bank = make_bank(4, 3, 2, 1);
  const std::vector<std::size_t> cands = all_positions(4);

  SUBCASE("ascending quartet over three levels") {
    const Array alpha({4}, {0.1, 0.2, 0.3, 0.4});
    const auto levels = pyramidal_sort(alpha, cands, bank, 3);
    REQUIRE(levels.size() == 3);
    CHECK(levels[0].member_positions == std::vector<std::size_t>{0, 1});
    CHECK(levels[1].member_positions == std::vector<std::size_t>{2});
    CHECK(levels[2].member_positions == std::vector<std::size_t>{3});
  }

  SUBCASE("all-equal weights collapse into the bottom level") {
    const Array alpha({4}, {0.25, 0.25, 0.25, 0.25});
    const auto levels = pyramidal_sort(alpha, cands, bank, 3);
    CHECK(levels[0].member_positions == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(levels[1].member_positions.empty());
    CHECK(levels[2].member_positions.empty());
  }

  SUBCASE("one level takes everything") {
    const Array alpha({4}, {0.1, 0.2, 0.3, 0.4});
    const auto levels = pyramidal_sort(alpha, cands, bank, 1);
    CHECK(levels[0].member_positions == cands);
  }

  SUBCASE("a lone survivor skips intermediate levels and lands at the apex") {
    const Array alpha({4}, {0.1, 0.15, 0.95, 0.0});
    const auto levels = pyramidal_sort(alpha, {0, 1, 2}, bank, 3);
    CHECK(levels[0].member_positions == std::vector<std::size_t>{0, 1});
    CHECK(levels[1].member_positions.empty());
    CHECK(levels[2].member_positions == std::vector<std::size_t>{2});
  }

  SUBCASE("skewed triple separates into singletons") {
    const Array alpha({4}, {0.1, 0.9, 0.95, 0.0});
    const auto levels = pyramidal_sort(alpha, {0, 1, 2}, bank, 3);
    CHECK(levels[0].member_positions == std::vector<std::size_t>{0});
    CHECK(levels[1].member_positions == std::vector<std::size_t>{1});
    CHECK(levels[2].member_positions == std::vector<std::size_t>{2});
  }
}

TEST_CASE("level trajectories are elementwise member means") {
  TrajectoryBank bank = constant_bank({1.0, 3.0, 10.0, 20.0}, 2);
  const Array alpha({4}, {0.1, 0.2, 0.3, 0.4});
  const auto levels = pyramidal_sort(alpha, all_positions(4), bank, 3);
  REQUIRE(levels[0].member_positions == std::vector<std::size_t>{0, 1});
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(levels[0].trajectory.at(i, 0) == 2.0);   // mean of 1 and 3
    CHECK(levels[1].trajectory.at(i, 0) == 10.0);  // singleton
    CHECK(levels[2].trajectory.at(i, 0) == 20.0);
  }
  // empty levels carry a zero trajectory of the right shape
  const Array equal({4}, {0.25, 0.25, 0.25, 0.25});
  const auto collapsed = pyramidal_sort(equal, all_positions(4), bank, 2);
  CHECK(collapsed[1].member_positions.empty());
  REQUIRE(collapsed[1].trajectory.rows() == 2);
  for (std::size_t i = 0; i < collapsed[1].trajectory.size(); ++i) {
    CHECK(collapsed[1].trajectory.data()[i] == 0.0);
  }
}

TEST_CASE("as-printed splitting keeps the full-count denominator and drops leftovers") {
  const TrajectoryBank bank = make_bank(4, 3, 2, 2);
  const Array alpha({4}, {0.1, 0.2, 0.3, 0.4});
  const auto levels =
      pyramidal_sort(alpha, all_positions(4), bank, 2, PyramidVariant::as_printed);
  // level 0: mean 0.25 takes {0,1}; top level: remaining sum 0.7 over the
  // full count 4 gives 0.175, which neither 0.3 nor 0.4 clears
  CHECK(levels[0].member_positions == std::vector<std::size_t>{0, 1});
  CHECK(levels[1].member_positions.empty());
  std::size_t assigned = levels[0].member_positions.size() + levels[1].member_positions.size();
  CHECK(assigned < 4);  // the partition property deliberately fails here
}

TEST_CASE("sorting validates its inputs") {
  const TrajectoryBank bank = make_bank(3, 3, 2, 4);
  const Array alpha({3}, {0.2, 0.3, 0.5});
  CHECK_THROWS_AS(pyramidal_sort(alpha, all_positions(3), bank, 0), UsageError);
  CHECK_THROWS_AS(pyramidal_sort(alpha, {0, 1}, bank, 3), UsageError);
  CHECK_THROWS_AS(pyramidal_sort(alpha, {0, 7}, bank, 2), UsageError);
}

TEST_CASE("random splits match the independent oracle exactly") {
  Rng rng(123);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t K = 2 + rng.below(5);           // 2..6 candidates
    const std::size_t levels = 1 + rng.below(std::min<std::size_t>(K, 4));
    const TrajectoryBank bank = make_bank(K, 4, 2, 1000 + std::uint64_t(trial));
    Array alpha({K});
    double sum = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
      alpha[i] = std::exp(rng.gaussian());
      sum += alpha[i];
    }
    for (std::size_t i = 0; i < K; ++i) alpha[i] /= sum;

    const auto got = pyramidal_sort(alpha, all_positions(K), bank, levels);
    const auto want = oracle::mean_split(alpha, all_positions(K), levels);
    REQUIRE(got.size() == want.size());
    for (std::size_t j = 0; j < levels; ++j) {
      CHECK(got[j].member_positions == want[j].members);
      const Array traj = oracle::level_trajectory(want[j].members, bank.trajectories, 4, 2);
      CHECK(got[j].trajectory == traj);
    }
  }
}

TEST_CASE("member sets are invariant under bank reordering") {
  ParameterStore store;
  const PyramidScorer scorer(store, 3, 1, 2, 55);
  const TrajectoryBank bank = make_bank(5, 4, 2, 66);
  const TimeSeriesBatch queries = query_batch(2, 4, 77);
  const PyramidSet base = build_pyramids(scorer, queries, bank, 3);

  // reverse the bank entry order
  TrajectoryBank reversed;
  reversed.latent_dim = bank.latent_dim;
  reversed.time_grid = bank.time_grid;
  reversed.trajectories = Array({5, 4, 2});
  for (std::size_t k = 0; k < 5; ++k) {
    reversed.sample_ids.push_back(bank.sample_ids[4 - k]);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t d = 0; d < 2; ++d) {
        reversed.trajectories.at(k, i, d) = bank.trajectories.at(4 - k, i, d);
      }
    }
  }
  const PyramidSet flipped = build_pyramids(scorer, queries, reversed, 3);
  for (std::size_t q = 0; q < 2; ++q) {
    for (std::size_t j = 0; j < 3; ++j) {
      std::set<std::string> a(base.pyramids[q].levels[j].member_ids.begin(),
                              base.pyramids[q].levels[j].member_ids.end());
      std::set<std::string> b(flipped.pyramids[q].levels[j].member_ids.begin(),
                              flipped.pyramids[q].levels[j].member_ids.end());
      CHECK(a == b);
    }
  }
}

TEST_CASE("built pyramids partition candidates and put the argmax at the apex") {
  ParameterStore store;
  const PyramidScorer scorer(store, 3, 1, 2, 91);
  const TrajectoryBank bank = make_bank(6, 4, 2, 92);
  const TimeSeriesBatch queries = query_batch(3, 4, 93);
  const ImportanceMatrix m = attention_scores(scorer, queries, bank);
  const PyramidSet set = build_pyramids(scorer, queries, bank, 3);
  REQUIRE(set.pyramids.size() == 3);
  CHECK(set.levels == 3);
  REQUIRE(set.weights.size() == 3);
  CHECK(set.weights[0] == doctest::Approx(1.0 / 3.0));
  CHECK(set.weights[2] == 1.0);

  for (std::size_t q = 0; q < 3; ++q) {
    const ImportancePyramid& pyr = set.pyramids[q];
    CHECK(pyr.query_id == queries.ids[q]);
    std::set<std::size_t> seen;
    for (const PyramidLevel& level : pyr.levels) {
      for (std::size_t pos : level.member_positions) {
        CHECK(seen.insert(pos).second);  // disjoint
      }
    }
    CHECK(seen.size() == m.candidates[q].size());  // partition
    // apex holds the argmax of this query's row
    std::size_t argmax = m.candidates[q][0];
    for (std::size_t c : m.candidates[q]) {
      if (m.alpha.at(q, c) > m.alpha.at(q, argmax)) argmax = c;
    }
    const auto& apex = pyr.levels.back().member_positions;
    CHECK(std::find(apex.begin(), apex.end(), argmax) != apex.end());
  }
}

TEST_CASE("pyramid sets round-trip through json bit-exactly") {
  ParameterStore store;
  const PyramidScorer scorer(store, 2, 1, 2, 14);
  const TrajectoryBank bank = make_bank(5, 3, 2, 15);
  const TimeSeriesBatch queries = query_batch(2, 3, 16);
  const PyramidSet set = build_pyramids(scorer, queries, bank, 2);
  const std::string text = set.to_json();
  const PyramidSet back = PyramidSet::from_json(text);
  CHECK(back.to_json() == text);
  CHECK(back.levels == set.levels);
  CHECK(back.weights == set.weights);
  REQUIRE(back.pyramids.size() == set.pyramids.size());
  for (std::size_t q = 0; q < set.pyramids.size(); ++q) {
    for (std::size_t j = 0; j < set.levels; ++j) {
      CHECK(back.pyramids[q].levels[j].member_positions ==
            set.pyramids[q].levels[j].member_positions);
      CHECK(back.pyramids[q].levels[j].trajectory ==
            set.pyramids[q].levels[j].trajectory);
    }
  }

  const std::filesystem::path path =
      std::filesystem::temp_directory_path() / "seqlink-data-tests" / "pyr.json";
  std::filesystem::create_directories(path.parent_path());
  set.save(path.string());
  CHECK(PyramidSet::load(path.string()).to_json() == text);
}

}  // TEST_SUITE
