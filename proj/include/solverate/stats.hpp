#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "solverate/numeric.hpp"
#include "solverate/rng.hpp"

namespace solverate {

/// Variance of the mean of N Bernoulli(p) trials.
inline double bernoulli_variance(double p, std::size_t n) {
  if (n == 0) throw std::invalid_argument("bernoulli_variance: N must be positive");
  if (!is_probability(p)) throw std::invalid_argument("bernoulli_variance: p outside [0,1]");
  return p * (1.0 - p) / static_cast<double>(n);
}

/// Variance of a product of independent per-stage success-rate estimates,
/// each the mean of N Bernoulli(p_i) trials, via
///   Var(prod X_i) = (prod E X_i)^2 * sum Var X_i / (E X_i)^2.
/// Note this is the first-order form; the exact product variance carries
/// higher-order cross terms of relative size O(1/N).
inline double product_estimator_variance(std::span<const double> probs, std::size_t n) {
  if (n == 0) throw std::invalid_argument("product_estimator_variance: N must be positive");
  if (probs.empty()) throw std::invalid_argument("product_estimator_variance: no stages");
  double ratio_sum = 0.0;
  for (double p : probs) {
    if (!(p > 0.0 && p <= 1.0)) {
      throw std::invalid_argument("product_estimator_variance: every p_i must lie in (0,1]");
    }
    ratio_sum += bernoulli_variance(p, n) / (p * p);
  }
  const double mean = stable_product(probs);
  return mean * mean * ratio_sum;
}

/// sum 1/p_i - n + 1 <= prod 1/p_i, the step that reduces the milestone
/// variance bound to a Bernoulli-type inequality. Holds for every p_i in (0,1].
inline bool variance_inequality_check(std::span<const double> probs) {
  if (probs.empty()) return true;
  double lhs = 1.0 - static_cast<double>(probs.size());
  double log_rhs = 0.0;
  for (double p : probs) {
    if (!(p > 0.0 && p <= 1.0)) {
      throw std::invalid_argument("variance_inequality_check: every p_i must lie in (0,1]");
    }
    lhs += 1.0 / p;
    log_rhs -= std::log(p);
  }
  const double rhs = std::exp(log_rhs);
  return lhs <= rhs * (1.0 + 1e-12) + 1e-12;
}

struct VarianceBreakdown {
  double end_to_end_variance = 0.0;
  double milestone_variance = 0.0;
  /// Var / E^2 for each stage estimate.
  std::vector<double> per_stage_terms;
  bool inequality_holds = true;
};

/// Closed-form variances of both estimators for a chain with the given
/// per-stage probabilities and N samples per estimator (per stage for the
/// milestone estimator). A zero-probability stage makes both estimates
/// identically 0.
inline VarianceBreakdown variance_breakdown(std::span<const double> probs, std::size_t n) {
  VarianceBreakdown out;
  const double truth = stable_product(probs);
  out.end_to_end_variance = bernoulli_variance(truth, n);
  const bool any_zero = std::any_of(probs.begin(), probs.end(), [](double p) { return p == 0.0; });
  if (any_zero) {
    out.milestone_variance = 0.0;
    out.per_stage_terms.assign(probs.size(), 0.0);
  } else {
    out.milestone_variance = product_estimator_variance(probs, n);
    for (double p : probs) out.per_stage_terms.push_back(bernoulli_variance(p, n) / (p * p));
  }
  out.inequality_holds = out.milestone_variance <= out.end_to_end_variance + 1e-12;
  return out;
}

inline double bits_to_prob(double bits) { return std::exp2(-bits); }

/// sum_{i=1}^{K} 1/(i(i+1)), summed directly. Telescopes to 1 - 1/(K+1).
inline double prior_partial_sum(std::uint64_t k) {
  if (k == 0) throw std::invalid_argument("prior_partial_sum: K must be positive");
  // Smallest terms first keeps the rounding error near one ulp of the total.
  double sum = 0.0;
  for (std::uint64_t i = k; i >= 1; --i) {
    const double x = static_cast<double>(i);
    sum += 1.0 / (x * (x + 1.0));
  }
  return sum;
}

/// Nearest-rank quantile of an ascending sample: the ceil(q*M)-th smallest.
inline double nearest_rank_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("nearest_rank_quantile: empty sample");
  const auto m = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(q * m));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

struct BetaPrior {
  double a = 1.0;
  double b = 1.0;
};

namespace detail {

/// Beta(alpha, beta) draw as a ratio of gammas. A zero shape pins the draw
/// to the matching endpoint.
inline double sample_beta(double alpha, double beta, Rng& rng) {
  if (alpha <= 0.0) return 0.0;
  if (beta <= 0.0) return 1.0;
  std::gamma_distribution<double> ga(alpha, 1.0);
  std::gamma_distribution<double> gb(beta, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  const double s = x + y;
  return s > 0.0 ? x / s : 0.5;
}

}  // namespace detail

inline constexpr std::size_t kMinPosteriorDraws = 1000;

/// Monte Carlo quantiles of prod_i B_i with B_i ~ Beta(S_i + a, N_i - S_i + b)
/// independent. Deterministic given `seed`.
inline std::vector<double> posterior_product_quantiles(std::span<const std::size_t> successes,
                                                       std::span<const std::size_t> trials,
                                                       BetaPrior prior, std::size_t draws,
                                                       std::span<const double> quantiles,
                                                       std::uint64_t seed) {
  if (successes.size() != trials.size()) {
    throw std::invalid_argument("posterior_product_quantiles: successes and trials differ in length");
  }
  if (draws < kMinPosteriorDraws) {
    throw std::invalid_argument("posterior_product_quantiles: need at least 1000 draws");
  }
  if (prior.a < 0.0 || prior.b < 0.0) {
    throw std::invalid_argument("posterior_product_quantiles: prior parameters must be non-negative");
  }
  for (std::size_t i = 0; i < successes.size(); ++i) {
    if (successes[i] > trials[i]) {
      throw std::invalid_argument("posterior_product_quantiles: stage " + std::to_string(i) +
                                  " has more successes than trials");
    }
    const double alpha = static_cast<double>(successes[i]) + prior.a;
    const double beta = static_cast<double>(trials[i] - successes[i]) + prior.b;
    if (alpha <= 0.0 && beta <= 0.0) {
      throw std::invalid_argument("posterior_product_quantiles: stage " + std::to_string(i) +
                                  " has an improper posterior");
    }
  }
  for (double q : quantiles) {
    if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile levels must lie in [0,1]");
  }

  const std::size_t stages = successes.size();
  std::vector<double> samples(draws);
  std::vector<double> factors(stages);
  std::vector<Rng> streams;
  streams.reserve(stages);
  for (std::size_t i = 0; i < stages; ++i) streams.emplace_back(derive_seed(seed, i));
  for (std::size_t d = 0; d < draws; ++d) {
    for (std::size_t i = 0; i < stages; ++i) {
      const double alpha = static_cast<double>(successes[i]) + prior.a;
      const double beta = static_cast<double>(trials[i] - successes[i]) + prior.b;
      factors[i] = detail::sample_beta(alpha, beta, streams[i]);
    }
    samples[d] = stable_product(factors);
  }
  std::sort(samples.begin(), samples.end());

  std::vector<double> out;
  out.reserve(quantiles.size());
  for (double q : quantiles) out.push_back(nearest_rank_quantile(samples, q));
  return out;
}

/// Mean and unbiased (R-1) sample variance; variance is 0 for fewer than two values.
struct SampleMoments {
  double mean = 0.0;
  double variance = 0.0;
};

inline SampleMoments sample_moments(std::span<const double> values) {
  SampleMoments m;
  if (values.empty()) return m;
  double sum = 0.0;
  for (double v : values) sum += v;
  m.mean = sum / static_cast<double>(values.size());
  if (values.size() < 2) return m;
  double ss = 0.0;
  for (double v : values) ss += (v - m.mean) * (v - m.mean);
  m.variance = ss / static_cast<double>(values.size() - 1);
  return m;
}

}  // namespace solverate
