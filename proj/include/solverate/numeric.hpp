#pragma once

#include <cmath>
#include <cstddef>
#include <span>

namespace solverate {

/// Products with more factors than this are accumulated in log space.
inline constexpr std::size_t kLogSpaceFactorThreshold = 30;

/// Product of non-negative factors. Long products are summed as logs and
/// exponentiated once so geometric shrinkage cannot underflow midway.
inline double stable_product(std::span<const double> factors) {
  if (factors.size() <= kLogSpaceFactorThreshold) {
    double acc = 1.0;
    for (double f : factors) acc *= f;
    return acc;
  }
  double log_acc = 0.0;
  for (double f : factors) {
    if (f == 0.0) return 0.0;
    log_acc += std::log(f);
  }
  return std::exp(log_acc);
}

inline bool is_probability(double p) noexcept { return p >= 0.0 && p <= 1.0; }

}  // namespace solverate
