#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ranges>
#include <vector>

#include "errors.hpp"
#include "random.hpp"

namespace clens {

inline constexpr double kZ95 = 1.959963984540054;

struct Interval {
  double mean = 0.0;
  double low = 0.0;
  double high = 0.0;
};

template <std::ranges::input_range R>
double mean_of(const R& values) {
  double s = 0.0;
  std::size_t n = 0;
  for (double v : values) {
    s += v;
    ++n;
  }
  if (n == 0) throw InputError("mean of an empty sample");
  return s / static_cast<double>(n);
}

// Standard error of the mean with the n-1 variance estimator.
template <std::ranges::input_range R>
double standard_error(const R& values) {
  const double m = mean_of(values);
  double ss = 0.0;
  std::size_t n = 0;
  for (double v : values) {
    ss += (v - m) * (v - m);
    ++n;
  }
  if (n < 2) return 0.0;
  return std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
}

// 95% normal-approximation interval: mean +- 1.96 sem.
template <std::ranges::input_range R>
Interval normal_ci(const R& values) {
  const double m = mean_of(values);
  const double half = kZ95 * standard_error(values);
  return {m, m - half, m + half};
}

// Normal-approximation interval for a proportion, clipped to [0, 1].
inline Interval proportion_ci(std::size_t successes, std::size_t n) {
  if (n == 0) throw InputError("proportion of an empty group");
  const double p = static_cast<double>(successes) / static_cast<double>(n);
  const double half = kZ95 * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
  return {p, std::max(0.0, p - half), std::min(1.0, p + half)};
}

// One-sided two-sample permutation test on the difference of means
// (matched > mismatched): p = (1 + #{permuted diff >= observed}) / (1 + iterations).
inline double permutation_test(const std::vector<double>& matched, const std::vector<double>& mismatched,
                               int iterations, std::uint64_t seed) {
  if (matched.empty() || mismatched.empty()) throw InputError("permutation test needs two non-empty samples");
  if (iterations < 100) throw InputError("permutation test needs at least 100 iterations");
  std::vector<double> pooled(matched);
  pooled.insert(pooled.end(), mismatched.begin(), mismatched.end());
  const auto na = matched.size();
  const double total = std::accumulate(pooled.begin(), pooled.end(), 0.0);
  const auto nb = static_cast<double>(mismatched.size());
  auto diff_for_first = [&](double sum_a) {
    return sum_a / static_cast<double>(na) - (total - sum_a) / nb;
  };
  const double observed = diff_for_first(std::accumulate(matched.begin(), matched.end(), 0.0));
  double scale = 0.0;
  for (double v : pooled) scale = std::max(scale, std::abs(v));
  const double tol = 1e-12 * std::max(1.0, scale);

  Rng rng(seed);
  long long hits = 0;
  for (int it = 0; it < iterations; ++it) {
    // partial Fisher-Yates: only the first na slots are needed
    double sum_a = 0.0;
    for (std::size_t i = 0; i < na; ++i) {
      auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                        static_cast<std::int64_t>(pooled.size() - 1)));
      std::swap(pooled[i], pooled[j]);
      sum_a += pooled[i];
    }
    if (diff_for_first(sum_a) >= observed - tol) ++hits;
  }
  return static_cast<double>(1 + hits) / static_cast<double>(1 + iterations);
}

}  // namespace clens
