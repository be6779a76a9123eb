#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "more/error.hpp"

namespace more {

// Pairwise (tree) summation in index order; deterministic for a given input order.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

inline double mean(std::span<const double> v) {
  if (v.empty()) throw InvalidArgument("mean of empty sequence");
  return pairwise_sum(v) / static_cast<double>(v.size());
}

// Median; the average of the two middle elements for even sizes.
inline double median(std::vector<double> v) {
  if (v.empty()) throw InvalidArgument("median of empty sequence");
  const std::size_t n = v.size();
  const std::size_t mid = n / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double hi = v[mid];
  if (n % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + mid);
  return 0.5 * (lo + hi);
}

struct WeightedSample {
  double value;
  double weight;  // > 0
};

struct WeightedMedian {
  double value;
  std::size_t index;  // position of the selected sample in the input
};

/// Lower weighted median: the smallest sample value at which the cumulative
/// weight reaches half of the total. It minimizes sum_i w_i |s - v_i| over s.
/// Equal values are ordered by input position so the result is deterministic.
inline WeightedMedian weighted_median(std::span<const WeightedSample> samples) {
  if (samples.empty()) throw InvalidArgument("weighted median of empty sequence");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return samples[a].value < samples[b].value; });
  std::vector<double> weights(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) weights[i] = samples[i].weight;
  const double total = pairwise_sum(weights);
  double cum = 0.0;
  for (std::size_t i : order) {
    cum += samples[i].weight;
    if (2.0 * cum >= total) return {samples[i].value, i};
  }
  return {samples[order.back()].value, order.back()};
}

}  // namespace more
