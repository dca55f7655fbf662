#pragma once

#include <vector>

#include "seqlink/array.hpp"

namespace seqlink {

/// Mean squared error over all elements. Shapes must match exactly.
double evaluate_mse(const Array& predictions, const Array& targets);

/// Rank-based AUC: the probability that a uniformly random positive outranks
/// a uniformly random negative, with ties counting one half. Labels must be
/// binary with both classes present.
double evaluate_auc(const Array& scores, const Array& labels);

/// Two-sided Wilcoxon rank-sum p-value for the hypothesis that `a` and `b`
/// are drawn from the same distribution. Combined sizes up to 12 are computed
/// by exhaustive enumeration of rank assignments (midranks for ties); larger
/// inputs use the tie-corrected normal approximation without continuity
/// correction.
double rank_sum_test(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace seqlink
