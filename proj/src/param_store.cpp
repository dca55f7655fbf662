#include "seqlink/param_store.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "seqlink/rng.hpp"

namespace seqlink {

using nlohmann::json;

void ParameterStore::define(const std::string& name, Array value) {
  if (entries_.count(name)) {
    throw UsageError("parameter '" + name + "' already defined");
  }
  Entry e;
  e.grad = Array::zeros(value.shape());
  e.m = Array::zeros(value.shape());
  e.v = Array::zeros(value.shape());
  e.value = std::move(value);
  entries_.emplace(name, std::move(e));
}

bool ParameterStore::contains(const std::string& name) const {
  return entries_.count(name) != 0;
}

const Array& ParameterStore::value(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw UsageError("unknown parameter '" + name + "'");
  return it->second.value;
}

Array& ParameterStore::mutable_value(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw UsageError("unknown parameter '" + name + "'");
  return it->second.value;
}

const Array& ParameterStore::grad(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw UsageError("unknown parameter '" + name + "'");
  return it->second.grad;
}

void ParameterStore::accumulate_grad(const std::string& name, const Array& g) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw UsageError("unknown parameter '" + name + "'");
  Array& acc = it->second.grad;
  if (!acc.same_shape(g)) {
    throw ShapeError("gradient shape " + g.shape_str() + " does not match parameter '" +
                     name + "' " + acc.shape_str());
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

void ParameterStore::zero_grad() {
  for (auto& [name, e] : entries_) {
    for (double& g : e.grad.vec()) g = 0.0;
  }
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

std::map<std::string, Array> ParameterStore::snapshot_values() const {
  std::map<std::string, Array> out;
  for (const auto& [name, e] : entries_) out.emplace(name, e.value);
  return out;
}

void adam_step(ParameterStore& store, const AdamOptions& opt, int step) {
  if (step < 1) throw UsageError("adam step index must be >= 1, got " + std::to_string(step));
  const double bc1 = 1.0 - std::pow(opt.beta1, step);
  const double bc2 = 1.0 - std::pow(opt.beta2, step);
  for (auto& [name, e] : store.entries_) {
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double g = e.grad[i];
      e.m[i] = opt.beta1 * e.m[i] + (1.0 - opt.beta1) * g;
      e.v[i] = opt.beta2 * e.v[i] + (1.0 - opt.beta2) * g * g;
      const double mhat = e.m[i] / bc1;
      const double vhat = e.v[i] / bc2;
      e.value[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
    if (!e.value.all_finite()) {
      throw NumericError("adam update produced non-finite values in '" + name + "'");
    }
  }
  store.step_ = step;
}

Array init_weight(std::size_t rows, std::size_t cols, std::uint64_t seed,
                  const std::string& name) {
  Rng rng = substream(seed, name);
  const double bound = 1.0 / std::sqrt(double(cols));
  Array w({rows, cols});
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
  return w;
}

void define_linear(ParameterStore& store, const std::string& prefix,
                   std::size_t out_dim, std::size_t in_dim, std::uint64_t seed) {
  if (!store.contains(prefix + "/W")) {
    store.define(prefix + "/W", init_weight(out_dim, in_dim, seed, prefix + "/W"));
    store.define(prefix + "/b", Array::zeros({out_dim}));
  }
}

static json array_values_json(const Array& a) {
  return json(a.vec());
}

std::string ParameterStore::to_checkpoint_json() const {
  json names = json::array();
  json shapes = json::array();
  json values = json::array();
  json moments_m = json::array();
  json moments_v = json::array();
  for (const auto& [name, e] : entries_) {
    names.push_back(name);
    shapes.push_back(e.value.shape());
    values.push_back(array_values_json(e.value));
    moments_m.push_back(array_values_json(e.m));
    moments_v.push_back(array_values_json(e.v));
  }
  json doc = {
      {"format_version", 1},
      {"names", names},
      {"shapes", shapes},
      {"values", values},
      {"adam_moments", {{"m", moments_m}, {"v", moments_v}}},
      {"step", step_},
  };
  return doc.dump(2);
}

ParameterStore ParameterStore::from_checkpoint_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (!doc.contains("format_version") || doc["format_version"].get<int>() != 1) {
    throw ParseError("checkpoint format_version missing or unsupported");
  }
  ParameterStore store;
  const auto& names = doc.at("names");
  const auto& shapes = doc.at("shapes");
  const auto& values = doc.at("values");
  const auto& mm = doc.at("adam_moments").at("m");
  const auto& mv = doc.at("adam_moments").at("v");
  if (names.size() != shapes.size() || names.size() != values.size() ||
      names.size() != mm.size() || names.size() != mv.size()) {
    throw ParseError("checkpoint parallel arrays have mismatched lengths");
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    std::vector<std::size_t> shape = shapes[i].get<std::vector<std::size_t>>();
    Array value(shape, values[i].get<std::vector<double>>());
    store.define(names[i].get<std::string>(), std::move(value));
    Entry& e = store.entries_.at(names[i].get<std::string>());
    e.m = Array(shape, mm[i].get<std::vector<double>>());
    e.v = Array(shape, mv[i].get<std::vector<double>>());
  }
  store.step_ = doc.at("step").get<int>();
  return store;
}

void ParameterStore::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot open '" + path + "' for writing");
  out << to_checkpoint_json() << "\n";
}

ParameterStore ParameterStore::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open checkpoint '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_checkpoint_json(buf.str());
}

}  // namespace seqlink
