#include "seqlink/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "seqlink/errors.hpp"

namespace seqlink {

double evaluate_mse(const Array& predictions, const Array& targets) {
  if (!predictions.same_shape(targets)) {
    throw ShapeError("evaluate_mse: predictions " + predictions.shape_str() +
                     " vs targets " + targets.shape_str());
  }
  if (predictions.size() == 0) throw UsageError("evaluate_mse: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double d = predictions[i] - targets[i];
    acc += d * d;
  }
  return acc / double(predictions.size());
}

namespace {

/// Midranks (1-based) of `values`; ties share the average of their ranks.
std::vector<double> midranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double shared = (double(i + 1) + double(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double evaluate_auc(const Array& scores, const Array& labels) {
  if (!scores.same_shape(labels)) {
    throw ShapeError("evaluate_auc: scores " + scores.shape_str() + " vs labels " +
                     labels.shape_str());
  }
  const std::size_t n = scores.size();
  if (n == 0) throw UsageError("evaluate_auc: empty input");
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0.0 && labels[i] != 1.0) {
      throw UsageError("evaluate_auc: labels must be 0 or 1");
    }
    if (labels[i] == 1.0) ++n_pos;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw UsageError("evaluate_auc: need both classes to rank against each other");
  }
  const std::vector<double> ranks = midranks(std::vector<double>(scores.vec()));
  double rank_sum_pos = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == 1.0) rank_sum_pos += ranks[i];
  }
  const double wins = rank_sum_pos - double(n_pos) * double(n_pos + 1) / 2.0;
  return wins / (double(n_pos) * double(n_neg));
}

double rank_sum_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw UsageError("rank_sum_test: both samples must be nonempty");
  const std::size_t na = a.size();
  const std::size_t nb = b.size();
  const std::size_t n = na + nb;

  std::vector<double> combined = a;
  combined.insert(combined.end(), b.begin(), b.end());
  const std::vector<double> ranks = midranks(combined);

  double w = 0.0;
  for (std::size_t i = 0; i < na; ++i) w += ranks[i];
  const double mu = double(na) * double(n + 1) / 2.0;
  const double observed = std::abs(w - mu);

  if (n <= 12) {
    // Exhaustive: every size-na subset of positions is equally likely under
    // the null; count those at least as extreme as the observed rank sum.
    std::uint64_t total = 0;
    std::uint64_t extreme = 0;
    for (std::uint32_t bits = 0; bits < (1u << n); ++bits) {
      if (std::uint32_t(__builtin_popcount(bits)) != na) continue;
      ++total;
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (bits & (1u << i)) sum += ranks[i];
      }
      if (std::abs(sum - mu) >= observed) ++extreme;
    }
    return double(extreme) / double(total);
  }

  // Tie-corrected normal approximation (no continuity correction).
  double tie_term = 0.0;
  std::vector<double> sorted = combined;
  std::sort(sorted.begin(), sorted.end());
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
    const double t = double(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  const double variance = double(na) * double(nb) / 12.0 *
                          (double(n + 1) - tie_term / (double(n) * double(n - 1)));
  if (variance <= 0.0) return 1.0;  // every observation tied: no rank signal at all
  const double z = (w - mu) / std::sqrt(variance);
  return std::erfc(std::abs(z) / std::sqrt(2.0));
}

}  // namespace seqlink
