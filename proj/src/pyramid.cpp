#include "seqlink/pyramid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "seqlink/errors.hpp"
#include "seqlink/rng.hpp"

namespace seqlink {

using nlohmann::json;

PyramidScorer::PyramidScorer(ParameterStore& store, std::size_t embed_dim,
                             std::size_t features, std::size_t latent_dim,
                             std::uint64_t seed)
    : store_(&store), embed_dim_(embed_dim), features_(features), latent_dim_(latent_dim) {
  if (embed_dim == 0) throw UsageError("PyramidScorer: embed_dim must be positive");
  define_linear(store, "pyr/embed_x", embed_dim, features, derive_seed(seed, "pyr/embed_x"));
  define_linear(store, "pyr/embed_u", embed_dim, latent_dim, derive_seed(seed, "pyr/embed_u"));
  if (!store.contains("pyr/score")) {
    Array theta = init_weight(1, 2 * embed_dim, seed, "pyr/score");
    store.define("pyr/score", Array({2 * embed_dim}, theta.vec()));
  }
}

Array PyramidScorer::embed(const std::string& prefix, const Array& x) const {
  const Array& W = store_->value(prefix + "/W");
  const Array& b = store_->value(prefix + "/b");
  if (x.size() != W.cols()) {
    throw ShapeError("PyramidScorer: input size " + std::to_string(x.size()) +
                     " does not match " + prefix + "/W columns " + std::to_string(W.cols()));
  }
  Array out({W.rows()});
  for (std::size_t r = 0; r < W.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < W.cols(); ++c) acc += W.at(r, c) * x[c];
    out[r] = acc + b[r];
  }
  return out;
}

Array PyramidScorer::pooled_value_embedding(const TimeSeriesBatch& batch,
                                            std::size_t sample) const {
  if (sample >= batch.samples()) throw UsageError("PyramidScorer: sample index out of range");
  Array pooled({embed_dim_});
  std::size_t observed = 0;
  for (std::size_t i = 0; i < batch.length(); ++i) {
    if (!batch.observed_at(sample, i)) continue;
    Array masked({features_});
    for (std::size_t d = 0; d < features_; ++d) {
      masked[d] = batch.x.at(sample, i, d) * batch.m.at(sample, i, d);
    }
    const Array e = embed("pyr/embed_x", masked);
    for (std::size_t j = 0; j < embed_dim_; ++j) pooled[j] += e[j];
    ++observed;
  }
  if (observed > 0) {
    for (std::size_t j = 0; j < embed_dim_; ++j) pooled[j] /= double(observed);
  }
  return pooled;
}

Array PyramidScorer::pooled_trajectory_embedding(const TrajectoryBank& bank,
                                                 std::size_t entry) const {
  if (entry >= bank.samples()) throw UsageError("PyramidScorer: bank entry out of range");
  Array pooled({embed_dim_});
  const std::size_t n = bank.length();
  if (n == 0) throw UsageError("PyramidScorer: bank has an empty time grid");
  for (std::size_t i = 0; i < n; ++i) {
    const Array e = embed("pyr/embed_u", bank.trajectory_point(entry, i));
    for (std::size_t j = 0; j < embed_dim_; ++j) pooled[j] += e[j];
  }
  for (std::size_t j = 0; j < embed_dim_; ++j) pooled[j] /= double(n);
  return pooled;
}

double PyramidScorer::score(const Array& pooled_value, const Array& pooled_trajectory) const {
  const Array& theta = store_->value("pyr/score");
  if (pooled_value.size() + pooled_trajectory.size() != theta.size()) {
    throw ShapeError("PyramidScorer: pooled embedding sizes do not match the score vector");
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < pooled_value.size(); ++j) acc += theta[j] * pooled_value[j];
  for (std::size_t j = 0; j < pooled_trajectory.size(); ++j) {
    acc += theta[pooled_value.size() + j] * pooled_trajectory[j];
  }
  return acc;
}

ImportanceMatrix attention_scores(const PyramidScorer& scorer, const TimeSeriesBatch& batch,
                                  const TrajectoryBank& bank) {
  if (bank.samples() == 0) throw UsageError("attention_scores: trajectory bank is empty");
  if (batch.features() != scorer.features()) {
    throw ShapeError("attention_scores: batch feature width does not match the scorer");
  }
  if (bank.latent_dim != scorer.latent_dim()) {
    throw ShapeError("attention_scores: bank latent width does not match the scorer");
  }

  const std::size_t kq = batch.samples();
  const std::size_t kb = bank.samples();

  std::vector<Array> traj_emb;
  traj_emb.reserve(kb);
  for (std::size_t c = 0; c < kb; ++c) {
    traj_emb.push_back(scorer.pooled_trajectory_embedding(bank, c));
  }

  ImportanceMatrix out;
  out.alpha = Array({kq, kb});
  out.query_ids = batch.ids;
  out.bank_ids = bank.sample_ids;
  out.candidates.resize(kq);

  for (std::size_t k = 0; k < kq; ++k) {
    const Array ex = scorer.pooled_value_embedding(batch, k);
    std::vector<std::size_t>& cand = out.candidates[k];
    for (std::size_t c = 0; c < kb; ++c) {
      if (bank.sample_ids[c] == batch.ids[k]) continue;  // never score a sample against itself
      cand.push_back(c);
    }
    if (cand.empty()) {
      throw UsageError("attention_scores: sample '" + batch.ids[k] +
                       "' has no candidates in the bank");
    }
    std::vector<double> scores(cand.size());
    for (std::size_t j = 0; j < cand.size(); ++j) {
      scores[j] = scorer.score(ex, traj_emb[cand[j]]);
      if (!std::isfinite(scores[j])) {
        throw NumericError("attention_scores: non-finite score for sample '" + batch.ids[k] +
                           "'");
      }
    }
    const double hi = *std::max_element(scores.begin(), scores.end());
    double denom = 0.0;
    for (double s : scores) denom += std::exp(s - hi);
    for (std::size_t j = 0; j < cand.size(); ++j) {
      out.alpha.at(k, cand[j]) = std::exp(scores[j] - hi) / denom;
    }
  }
  return out;
}

namespace {

Array level_mean_trajectory(const std::vector<std::size_t>& members,
                            const TrajectoryBank& bank) {
  Array traj({bank.length(), bank.latent_dim});
  if (members.empty()) return traj;
  for (std::size_t m : members) {
    for (std::size_t i = 0; i < bank.length(); ++i) {
      for (std::size_t j = 0; j < bank.latent_dim; ++j) {
        traj.at(i, j) += bank.trajectories.at(m, i, j);
      }
    }
  }
  for (std::size_t i = 0; i < traj.size(); ++i) traj[std::size_t(i)] /= double(members.size());
  return traj;
}

}  // namespace

std::vector<PyramidLevel> pyramidal_sort(const Array& alpha_row,
                                         const std::vector<std::size_t>& candidates,
                                         const TrajectoryBank& bank, std::size_t levels,
                                         PyramidVariant variant) {
  if (levels < 1) throw UsageError("pyramidal_sort: need at least one level");
  if (candidates.size() < levels) {
    throw UsageError("pyramidal_sort: " + std::to_string(levels) + " levels but only " +
                     std::to_string(candidates.size()) + " candidates");
  }
  for (std::size_t c : candidates) {
    if (c >= bank.samples()) throw UsageError("pyramidal_sort: candidate index out of range");
    if (c >= alpha_row.size()) throw UsageError("pyramidal_sort: alpha row too short");
  }

  const std::size_t full_count = candidates.size();
  std::vector<std::size_t> remaining = candidates;  // ascending bank positions throughout
  std::vector<std::vector<std::size_t>> members(levels);

  for (std::size_t level = 0; level + 1 < levels && !remaining.empty(); ++level) {
    if (variant == PyramidVariant::fixed && remaining.size() == 1) {
      continue;  // a lone candidate rides up to the apex
    }
    double sum = 0.0;
    for (std::size_t c : remaining) sum += alpha_row[c];
    const double denom =
        variant == PyramidVariant::fixed ? double(remaining.size()) : double(full_count);
    const double mean = sum / denom;
    std::vector<std::size_t> next;
    for (std::size_t c : remaining) {
      if (alpha_row[c] <= mean) {
        members[level].push_back(c);
      } else {
        next.push_back(c);
      }
    }
    remaining = std::move(next);
  }

  if (variant == PyramidVariant::fixed) {
    members[levels - 1] = std::move(remaining);  // the apex absorbs whatever is left
  } else if (!remaining.empty()) {
    // As printed, the top level filters too; anything above its mean is dropped.
    double sum = 0.0;
    for (std::size_t c : remaining) sum += alpha_row[c];
    const double mean = sum / double(full_count);
    for (std::size_t c : remaining) {
      if (alpha_row[c] <= mean) members[levels - 1].push_back(c);
    }
  }

  std::vector<PyramidLevel> out(levels);
  for (std::size_t level = 0; level < levels; ++level) {
    out[level].member_positions = std::move(members[level]);
    for (std::size_t c : out[level].member_positions) {
      out[level].member_ids.push_back(bank.sample_ids[c]);
    }
    out[level].trajectory = level_mean_trajectory(out[level].member_positions, bank);
  }
  return out;
}

Array default_level_weights(std::size_t levels) {
  if (levels < 1) throw UsageError("default_level_weights: need at least one level");
  Array w({levels});
  for (std::size_t j = 0; j < levels; ++j) w[j] = double(j + 1) / double(levels);
  return w;
}

PyramidSet build_pyramids(const PyramidScorer& scorer, const TimeSeriesBatch& batch,
                          const TrajectoryBank& bank, std::size_t levels,
                          PyramidVariant variant) {
  const ImportanceMatrix matrix = attention_scores(scorer, batch, bank);
  PyramidSet set;
  set.levels = levels;
  set.weights = default_level_weights(levels);
  set.pyramids.reserve(batch.samples());
  for (std::size_t k = 0; k < batch.samples(); ++k) {
    Array row({bank.samples()});
    for (std::size_t c = 0; c < bank.samples(); ++c) row[c] = matrix.alpha.at(k, c);
    ImportancePyramid pyr;
    pyr.query_id = batch.ids[k];
    pyr.levels = pyramidal_sort(row, matrix.candidates[k], bank, levels, variant);
    set.pyramids.push_back(std::move(pyr));
  }
  return set;
}

std::string PyramidSet::to_json() const {
  json pyrs = json::array();
  for (const ImportancePyramid& p : pyramids) {
    json lv = json::array();
    for (const PyramidLevel& level : p.levels) {
      lv.push_back({{"member_positions", level.member_positions},
                    {"member_ids", level.member_ids},
                    {"trajectory",
                     {{"shape", level.trajectory.shape()}, {"data", level.trajectory.vec()}}}});
    }
    pyrs.push_back({{"query_id", p.query_id}, {"levels", std::move(lv)}});
  }
  json doc = {{"format_version", 1},
              {"levels", levels},
              {"weights", weights.vec()},
              {"pyramids", std::move(pyrs)}};
  return doc.dump();
}

PyramidSet PyramidSet::from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("pyramid set: ") + e.what());
  }
  if (!doc.contains("format_version") || doc["format_version"].get<int>() != 1) {
    throw ParseError("pyramid set: unsupported format_version");
  }
  PyramidSet set;
  set.levels = doc.at("levels").get<std::size_t>();
  auto w = doc.at("weights").get<std::vector<double>>();
  const std::size_t weight_count = w.size();
  set.weights = Array({weight_count}, std::move(w));
  if (set.weights.size() != set.levels) {
    throw ParseError("pyramid set: weight count does not match the level count");
  }
  for (const json& p : doc.at("pyramids")) {
    ImportancePyramid pyr;
    pyr.query_id = p.at("query_id").get<std::string>();
    for (const json& lv : p.at("levels")) {
      PyramidLevel level;
      level.member_positions = lv.at("member_positions").get<std::vector<std::size_t>>();
      level.member_ids = lv.at("member_ids").get<std::vector<std::string>>();
      level.trajectory = Array(lv.at("trajectory").at("shape").get<std::vector<std::size_t>>(),
                               lv.at("trajectory").at("data").get<std::vector<double>>());
      pyr.levels.push_back(std::move(level));
    }
    if (pyr.levels.size() != set.levels) {
      throw ParseError("pyramid set: pyramid '" + pyr.query_id + "' has " +
                       std::to_string(pyr.levels.size()) + " levels, expected " +
                       std::to_string(set.levels));
    }
    set.pyramids.push_back(std::move(pyr));
  }
  return set;
}

void PyramidSet::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write '" + path + "'");
  out << to_json();
}

PyramidSet PyramidSet::load(const std::string& path) {
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

}  // namespace seqlink
