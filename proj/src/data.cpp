#include "seqlink/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "seqlink/errors.hpp"
#include "seqlink/rng.hpp"

namespace seqlink {

using nlohmann::json;

namespace {

constexpr double kTwoPi = 2.0 * 3.14159265358979323846;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write '" + path + "'");
  out << text;
}

TimeSeriesBatch gather_samples(const TimeSeriesBatch& batch,
                               const std::vector<std::size_t>& indices) {
  const std::size_t n = batch.length();
  const std::size_t D = batch.features();
  const std::size_t W = batch.target_width();
  TimeSeriesBatch out;
  out.x = Array({indices.size(), n, D});
  out.m = Array({indices.size(), n, D});
  out.t = batch.t;
  out.target = Array({indices.size(), W});
  for (std::size_t row = 0; row < indices.size(); ++row) {
    const std::size_t k = indices[row];
    out.ids.push_back(batch.ids[k]);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t d = 0; d < D; ++d) {
        out.x.at(row, i, d) = batch.x.at(k, i, d);
        out.m.at(row, i, d) = batch.m.at(k, i, d);
      }
    }
    for (std::size_t w = 0; w < W; ++w) out.target.at(row, w) = batch.target.at(k, w);
  }
  return out;
}

}  // namespace

// ---- manifest ----------------------------------------------------------------

std::string DatasetManifest::to_json() const {
  json b = json::array();
  for (const FeatureBounds& fb : bounds) {
    b.push_back({{"lo", fb.lo}, {"hi", fb.hi}, {"constant", fb.constant}});
  }
  json doc = {
      {"format_version", 1}, {"source", source},   {"length", length},
      {"dimension", dimension}, {"sparsity", sparsity}, {"seed", seed},
      {"bounds", b},            {"warnings", warnings},
  };
  return doc.dump(2);
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
  if (!doc.contains("format_version") || doc["format_version"].get<int>() != 1) {
    throw ParseError("manifest: unsupported format_version");
  }
  DatasetManifest m;
  m.source = doc.at("source").get<std::string>();
  m.length = doc.at("length").get<std::size_t>();
  m.dimension = doc.at("dimension").get<std::size_t>();
  m.sparsity = doc.at("sparsity").get<double>();
  m.seed = doc.at("seed").get<std::uint64_t>();
  for (const json& b : doc.at("bounds")) {
    m.bounds.push_back({b.at("lo").get<double>(), b.at("hi").get<double>(),
                        b.at("constant").get<bool>()});
  }
  m.warnings = doc.at("warnings").get<std::vector<std::string>>();
  return m;
}

// ---- synthetic generator ------------------------------------------------------

TimeSeriesBatch generate_gaussian_periodic(std::size_t K, std::size_t n,
                                           std::uint64_t seed,
                                           std::vector<TrajectoryParams>* params_out) {
  if (K < 1 || n < 1) {
    throw UsageError("generate_gaussian_periodic: K and n must be >= 1");
  }
  TimeSeriesBatch batch;
  batch.x = Array({K, n, 1});
  batch.m = Array::full({K, n, 1}, 1.0);
  batch.t = Array({n});
  batch.target = Array({K, 1});
  for (std::size_t i = 0; i < n; ++i) batch.t[i] = double(i) / double(n);

  if (params_out) params_out->clear();
  for (std::size_t k = 0; k < K; ++k) {
    Rng rng = substream(seed, "gen", k);
    TrajectoryParams p;
    p.amplitude = 1.0 + 0.25 * rng.gaussian();
    p.log_frequency = std::log(4.0) + 0.3 * rng.gaussian();
    p.phase = 0.5 * rng.gaussian();
    const double freq = std::exp(p.log_frequency);
    for (std::size_t i = 0; i < n; ++i) {
      const double clean = p.amplitude * std::sin(kTwoPi * freq * batch.t[i] + p.phase);
      batch.x.at(k, i, 0) = clean + 0.1 * rng.gaussian();
    }
    // One step past the grid (t = 1), noiseless: the forecasting target.
    batch.target.at(k, 0) = p.amplitude * std::sin(kTwoPi * freq * 1.0 + p.phase);
    batch.ids.push_back("s" + std::to_string(k));
    if (params_out) params_out->push_back(p);
  }
  return batch;
}

// ---- sparsity ------------------------------------------------------------------

TimeSeriesBatch apply_sparsity(const TimeSeriesBatch& batch, double fraction,
                               std::uint64_t seed, GapShape shape) {
  if (fraction < 0.0 || fraction >= 1.0) {
    throw UsageError("apply_sparsity: fraction must lie in [0, 1)");
  }
  TimeSeriesBatch out = batch;
  if (fraction == 0.0) return out;
  const std::size_t n = batch.length();
  const std::size_t removal = std::size_t(std::floor(fraction * double(n)));
  if (removal < 1) {
    throw UsageError("apply_sparsity: fraction " + std::to_string(fraction) +
                     " removes no whole time point at n=" + std::to_string(n));
  }
  for (std::size_t k = 0; k < batch.samples(); ++k) {
    Rng rng = substream(seed, "sparsity", k);
    std::vector<std::size_t> removed;
    if (shape == GapShape::contiguous) {
      const std::size_t start = rng.below(n - removal + 1);
      for (std::size_t i = 0; i < removal; ++i) removed.push_back(start + i);
    } else {
      std::vector<std::size_t> order(n);
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      rng.shuffle(order);
      removed.assign(order.begin(), order.begin() + std::ptrdiff_t(removal));
    }
    for (std::size_t i : removed) {
      for (std::size_t d = 0; d < batch.features(); ++d) {
        out.x.at(k, i, d) = 0.0;
        out.m.at(k, i, d) = 0.0;
      }
    }
  }
  return out;
}

// ---- CSV ingestion --------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_number(const std::string& token, const std::string& path, std::size_t line,
                    const std::string& what) {
  const char* begin = token.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (token.empty() || end != begin + token.size()) {
    throw ParseError(path + ":" + std::to_string(line) + ": non-numeric " + what + " '" +
                     token + "'");
  }
  return v;
}

struct CsvRow {
  double time;
  std::vector<double> values;
  std::vector<double> masks;
  double target;
  std::size_t line;
};

}  // namespace

TimeSeriesBatch load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": no data rows");
  const std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "series_id" || header[1] != "time") {
    throw ParseError(path + ":1: header must start with 'series_id,time,value_1,...'");
  }
  std::size_t D = 0;
  std::size_t col = 2;
  while (col < header.size() && header[col] == "value_" + std::to_string(D + 1)) {
    ++D;
    ++col;
  }
  if (D == 0) throw ParseError(path + ":1: no value_1 column");
  bool has_mask = false;
  if (col < header.size() && header[col] == "mask_1") {
    for (std::size_t d = 0; d < D; ++d, ++col) {
      if (col >= header.size() || header[col] != "mask_" + std::to_string(d + 1)) {
        throw ParseError(path + ":1: expected " + std::to_string(D) +
                         " mask columns to match the value columns");
      }
    }
    has_mask = true;
  }
  bool has_target = false;
  if (col < header.size() && header[col] == "target") {
    has_target = true;
    ++col;
  }
  if (col != header.size()) {
    throw ParseError(path + ":1: unexpected column '" + header[col] + "'");
  }

  std::vector<std::string> order;
  std::map<std::string, std::vector<CsvRow>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> tok = split_csv_line(line);
    if (tok.size() != header.size()) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " columns, found " +
                       std::to_string(tok.size()));
    }
    CsvRow row;
    row.line = line_no;
    row.time = parse_number(tok[1], path, line_no, "time");
    for (std::size_t d = 0; d < D; ++d) {
      row.values.push_back(parse_number(tok[2 + d], path, line_no, "value"));
    }
    if (has_mask) {
      for (std::size_t d = 0; d < D; ++d) {
        const double mv = parse_number(tok[2 + D + d], path, line_no, "mask");
        if (mv != 0.0 && mv != 1.0) {
          throw ParseError(path + ":" + std::to_string(line_no) +
                           ": mask entries must be 0 or 1");
        }
        row.masks.push_back(mv);
      }
    } else {
      row.masks.assign(D, 1.0);
    }
    row.target = has_target ? parse_number(tok[2 + D + (has_mask ? D : 0)], path,
                                           line_no, "target")
                            : 0.0;
    if (!rows.count(tok[0])) order.push_back(tok[0]);
    rows[tok[0]].push_back(std::move(row));
  }
  if (order.empty()) throw ParseError(path + ": no data rows");

  // Shared grid: sorted union of every time seen. Rows may arrive unsorted.
  std::vector<double> grid;
  for (const auto& [id, series] : rows) {
    (void)id;
    for (const CsvRow& r : series) grid.push_back(r.time);
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  const std::size_t K = order.size();
  const std::size_t n = grid.size();
  TimeSeriesBatch batch;
  batch.x = Array({K, n, D});
  batch.m = Array({K, n, D});
  batch.t = Array({n});
  for (std::size_t i = 0; i < n; ++i) batch.t[i] = grid[i];
  batch.target = Array({K, has_target ? std::size_t(1) : std::size_t(0)});
  batch.ids = order;

  for (std::size_t k = 0; k < K; ++k) {
    std::vector<CsvRow>& series = rows[order[k]];
    std::stable_sort(series.begin(), series.end(),
                     [](const CsvRow& a, const CsvRow& b) { return a.time < b.time; });
    for (std::size_t r = 1; r < series.size(); ++r) {
      if (series[r].time == series[r - 1].time) {
        throw ParseError(path + ":" + std::to_string(series[r].line) +
                         ": duplicate timestamp for series '" + order[k] + "'");
      }
    }
    for (const CsvRow& row : series) {
      const std::size_t i = std::size_t(
          std::lower_bound(grid.begin(), grid.end(), row.time) - grid.begin());
      for (std::size_t d = 0; d < D; ++d) {
        // The mask wins: an unobserved cell is stored as zero regardless of
        // what the value column carried.
        batch.m.at(k, i, d) = row.masks[d];
        batch.x.at(k, i, d) = row.masks[d] == 1.0 ? row.values[d] : 0.0;
      }
    }
    if (has_target && !series.empty()) {
      batch.target.at(k, 0) = series.back().target;
    }
  }
  batch.validate();
  return batch;
}

// ---- normalization -------------------------------------------------------------

namespace {

TimeSeriesBatch rescale(const TimeSeriesBatch& batch,
                        const std::vector<FeatureBounds>& bounds, bool targets,
                        bool inverse) {
  if (bounds.size() != batch.features()) {
    throw UsageError("normalization bounds cover " + std::to_string(bounds.size()) +
                     " features, batch has " + std::to_string(batch.features()));
  }
  if (targets && batch.target_width() != batch.features()) {
    throw UsageError("target normalization requires target width == feature count");
  }
  TimeSeriesBatch out = batch;
  auto map_one = [&](double v, const FeatureBounds& b) {
    if (b.constant) return inverse ? b.lo : 0.5;
    return inverse ? v * (b.hi - b.lo) + b.lo : (v - b.lo) / (b.hi - b.lo);
  };
  for (std::size_t k = 0; k < batch.samples(); ++k) {
    for (std::size_t i = 0; i < batch.length(); ++i) {
      for (std::size_t d = 0; d < batch.features(); ++d) {
        if (batch.m.at(k, i, d) == 1.0) {
          out.x.at(k, i, d) = map_one(batch.x.at(k, i, d), bounds[d]);
        }
      }
    }
    if (targets) {
      for (std::size_t d = 0; d < batch.features(); ++d) {
        out.target.at(k, d) = map_one(batch.target.at(k, d), bounds[d]);
      }
    }
  }
  return out;
}

}  // namespace

NormalizationResult normalize_01(const TimeSeriesBatch& batch, bool normalize_targets) {
  NormalizationResult res;
  res.bounds.resize(batch.features());
  for (std::size_t d = 0; d < batch.features(); ++d) {
    bool seen = false;
    double lo = 0.0, hi = 0.0;
    for (std::size_t k = 0; k < batch.samples(); ++k) {
      for (std::size_t i = 0; i < batch.length(); ++i) {
        if (batch.m.at(k, i, d) != 1.0) continue;
        const double v = batch.x.at(k, i, d);
        if (!seen) {
          lo = hi = v;
          seen = true;
        } else {
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      }
    }
    if (!seen) {
      throw UsageError("normalize_01: feature " + std::to_string(d) +
                       " has no observed values");
    }
    res.bounds[d] = {lo, hi, lo == hi};
    if (lo == hi) {
      res.warnings.push_back("feature " + std::to_string(d) +
                             " is constant (value " + std::to_string(lo) +
                             "); mapped to 0.5");
    }
  }
  res.batch = rescale(batch, res.bounds, normalize_targets, false);
  return res;
}

TimeSeriesBatch normalize_with(const TimeSeriesBatch& batch,
                               const std::vector<FeatureBounds>& bounds,
                               bool normalize_targets) {
  return rescale(batch, bounds, normalize_targets, false);
}

TimeSeriesBatch denormalize(const TimeSeriesBatch& batch,
                            const std::vector<FeatureBounds>& bounds,
                            bool denormalize_targets) {
  return rescale(batch, bounds, denormalize_targets, true);
}

// ---- splits --------------------------------------------------------------------

std::pair<TimeSeriesBatch, TimeSeriesBatch> split_shuffled(const TimeSeriesBatch& batch,
                                                           double train_fraction,
                                                           std::uint64_t seed) {
  const std::size_t K = batch.samples();
  if (K < 2) throw UsageError("split_shuffled: need at least 2 samples");
  if (train_fraction <= 0.0 || train_fraction >= 1.0) {
    throw UsageError("split_shuffled: train_fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> perm(K);
  for (std::size_t i = 0; i < K; ++i) perm[i] = i;
  Rng rng = substream(seed, "split");
  rng.shuffle(perm);
  std::size_t n_train = std::size_t(std::floor(train_fraction * double(K)));
  n_train = std::max<std::size_t>(1, std::min(n_train, K - 1));
  const std::vector<std::size_t> train_idx(perm.begin(), perm.begin() + std::ptrdiff_t(n_train));
  const std::vector<std::size_t> test_idx(perm.begin() + std::ptrdiff_t(n_train), perm.end());
  return {gather_samples(batch, train_idx), gather_samples(batch, test_idx)};
}

// ---- batch serialization ---------------------------------------------------------

std::string batch_to_json(const TimeSeriesBatch& batch) {
  json doc = {
      {"format_version", 1},
      {"ids", batch.ids},
      {"t", batch.t.vec()},
      {"x", {{"shape", batch.x.shape()}, {"data", batch.x.vec()}}},
      {"m", {{"shape", batch.m.shape()}, {"data", batch.m.vec()}}},
      {"target", {{"shape", batch.target.shape()}, {"data", batch.target.vec()}}},
  };
  return doc.dump();
}

TimeSeriesBatch batch_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("batch: ") + e.what());
  }
  if (!doc.contains("format_version") || doc["format_version"].get<int>() != 1) {
    throw ParseError("batch: unsupported format_version");
  }
  auto read_array = [&](const char* key) {
    const json& node = doc.at(key);
    return Array(node.at("shape").get<std::vector<std::size_t>>(),
                 node.at("data").get<std::vector<double>>());
  };
  TimeSeriesBatch batch;
  batch.ids = doc.at("ids").get<std::vector<std::string>>();
  batch.t = Array({doc.at("t").size()}, doc.at("t").get<std::vector<double>>());
  batch.x = read_array("x");
  batch.m = read_array("m");
  batch.target = read_array("target");
  batch.validate();
  return batch;
}

void save_batch(const std::string& path, const TimeSeriesBatch& batch) {
  write_file(path, batch_to_json(batch));
}

TimeSeriesBatch load_batch(const std::string& path) {
  try {
    return batch_from_json(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace seqlink
