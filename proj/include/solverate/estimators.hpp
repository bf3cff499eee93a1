#pragma once

// The four solve-rate estimators: end-to-end Monte Carlo, the milestone
// product estimator, expert best-of-N, and the importance-sampling
// corrected best-of-N variant.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "solverate/numeric.hpp"
#include "solverate/parallel.hpp"
#include "solverate/rng.hpp"
#include "solverate/stats.hpp"
#include "solverate/task_model.hpp"

namespace solverate {

enum class Method { end_to_end, milestone, expert_bon, corrected_is };

inline std::string_view to_string(Method m) noexcept {
  switch (m) {
    case Method::end_to_end: return "end_to_end";
    case Method::milestone: return "milestone";
    case Method::expert_bon: return "expert_bon";
    case Method::corrected_is: return "corrected_is";
  }
  return "unknown";
}

inline Method parse_method(std::string_view text) {
  if (text == "end_to_end") return Method::end_to_end;
  if (text == "milestone") return Method::milestone;
  if (text == "expert_bon") return Method::expert_bon;
  if (text == "corrected_is") return Method::corrected_is;
  throw SpecError("unknown method '" + std::string(text) + "'");
}

struct Interval {
  double low = 0.0;
  double high = 0.0;

  bool covers(double x) const noexcept { return x >= low && x <= high; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

struct EstimateReport {
  std::string task_name;
  Method method = Method::end_to_end;
  /// Absent when no estimate exists (every expert best-of-N rollout failed).
  std::optional<double> point_estimate;
  std::string absent_reason;
  /// 2.5% / 97.5% posterior quantiles.
  std::optional<Interval> interval;
  /// Samples per stage; one entry for single-stage methods.
  std::vector<std::size_t> samples_used;
  std::uint64_t master_seed = 0;
  std::size_t excluded_rollouts = 0;
  /// Milestone only: successes per stage that was run.
  std::vector<std::size_t> stage_successes;
  /// Milestone only: a stage had zero successes; any later stages were skipped.
  bool truncated = false;
};

struct EstimatorOptions {
  /// 0 selects hardware concurrency. Results do not depend on this.
  unsigned workers = 1;
  bool compute_interval = true;
  BetaPrior interval_prior{1.0, 1.0};
  std::size_t posterior_draws = 10000;
};

namespace detail {

// Seed streams under one master seed.
inline constexpr std::uint64_t kRolloutStream = 1;
inline constexpr std::uint64_t kPosteriorStream = 2;
inline constexpr std::uint64_t kMilestoneStream = 3;

inline std::optional<Interval> posterior_interval(std::span<const std::size_t> successes,
                                                  std::span<const std::size_t> trials,
                                                  std::uint64_t master_seed,
                                                  const EstimatorOptions& opts) {
  if (!opts.compute_interval) return std::nullopt;
  static constexpr double kLevels[] = {0.025, 0.975};
  const auto q = posterior_product_quantiles(successes, trials, opts.interval_prior,
                                             opts.posterior_draws, kLevels,
                                             derive_seed(master_seed, kPosteriorStream));
  return Interval{q[0], q[1]};
}

inline void require_samples(std::size_t n, std::string_view what) {
  if (n == 0) throw SpecError(std::string(what) + " must be at least 1");
}

}  // namespace detail

/// Fraction of N independent rollouts that pass under `regime`.
template <class Task>
  requires std::is_same_v<Task, ChainTaskSpec> || std::is_same_v<Task, GraphTaskSpec>
EstimateReport end_to_end_estimate(const Task& task, GradingRegime regime, std::size_t n,
                                   std::uint64_t master_seed, const EstimatorOptions& opts = {}) {
  detail::require_samples(n, "N");
  std::vector<char> passed(n, 0);
  parallel_for(n, opts.workers, [&](std::size_t i) {
    const auto t = simulate_rollout(task, derive_seed(master_seed, detail::kRolloutStream, i));
    passed[i] = grade(t, task, regime) ? 1 : 0;
  });
  std::size_t successes = 0;
  for (char p : passed) successes += static_cast<std::size_t>(p);

  EstimateReport r;
  r.task_name = task.name();
  r.method = Method::end_to_end;
  r.point_estimate = static_cast<double>(successes) / static_cast<double>(n);
  r.samples_used = {n};
  r.master_seed = master_seed;
  const std::size_t s[] = {successes};
  const std::size_t t[] = {n};
  r.interval = detail::posterior_interval(s, t, master_seed, opts);
  return r;
}

/// prod S_i / N over the stages; 0 as soon as one stage has no successes.
inline double milestone_point_from_counts(std::span<const std::size_t> successes, std::size_t n) {
  detail::require_samples(n, "N_per_milestone");
  std::vector<double> ratios;
  ratios.reserve(successes.size());
  for (std::size_t s : successes) {
    if (s > n) throw SpecError("stage successes exceed trials");
    ratios.push_back(static_cast<double>(s) / static_cast<double>(n));
  }
  return stable_product(ratios);
}

/// Milestone protocol. Stage 1 runs N fresh attempts at the first canonical
/// milestone. Stage i > 1 runs N attempts, each continuing a stage-(i-1)
/// success drawn uniformly with replacement; a drawn prefix with no
/// messages left counts as a failed attempt. Graph tasks are measured
/// against their canonical order, as the method assumes.
///
/// The point estimate is the plain product of stage ratios. `opts.interval_prior`
/// sets the Beta prior for the interval only.
template <class Task>
  requires std::is_same_v<Task, ChainTaskSpec> || std::is_same_v<Task, GraphTaskSpec>
EstimateReport milestone_estimate(const Task& task, std::size_t n_per_milestone,
                                  std::uint64_t master_seed, const EstimatorOptions& opts = {}) {
  detail::require_samples(n_per_milestone, "N_per_milestone");
  const std::size_t stages = task.milestone_count();
  const std::size_t budget = task.message_budget();
  std::vector<std::size_t> canonical;
  if constexpr (std::is_same_v<Task, GraphTaskSpec>) {
    canonical.assign(task.canonical_order().begin(), task.canonical_order().end());
  } else {
    canonical = detail::identity_order(stages);
  }

  EstimateReport r;
  r.task_name = task.name();
  r.method = Method::milestone;
  r.master_seed = master_seed;

  const auto empty = std::make_shared<const Trajectory>();
  std::vector<std::shared_ptr<const Trajectory>> survivors;
  for (std::size_t stage = 1; stage <= stages; ++stage) {
    const std::uint64_t stage_seed = derive_seed(master_seed, detail::kMilestoneStream, stage);
    std::vector<std::shared_ptr<const Trajectory>> outcome(n_per_milestone);
    parallel_for(n_per_milestone, opts.workers, [&](std::size_t j) {
      Rng rng(derive_seed(stage_seed, j));
      std::shared_ptr<const Trajectory> prefix = empty;
      if (stage > 1) {
        auto pick = static_cast<std::size_t>(rng.uniform() * static_cast<double>(survivors.size()));
        prefix = survivors[std::min(pick, survivors.size() - 1)];
      }
      if (prefix->messages_used >= budget) return;
      auto t = simulate_from_prefix(task, stage, prefix, rng());
      if (milestone_reached(t, canonical, stage, budget)) {
        outcome[j] = std::make_shared<const Trajectory>(std::move(t));
      }
    });

    survivors.clear();
    for (auto& t : outcome) {
      if (t) survivors.push_back(std::move(t));
    }
    r.stage_successes.push_back(survivors.size());
    r.samples_used.push_back(n_per_milestone);
    if (survivors.empty()) {
      r.truncated = true;
      break;
    }
  }

  r.point_estimate = milestone_point_from_counts(r.stage_successes, n_per_milestone);
  r.interval = detail::posterior_interval(r.stage_successes, r.samples_used, master_seed, opts);
  return r;
}

/// log2(i(i+1)) summed over the chosen indices.
inline double bon_bits(std::span<const std::size_t> chosen_indices) {
  double bits = 0.0;
  for (std::size_t i : chosen_indices) bits += index_cost_bits(i);
  return bits;
}

inline double bon_bits(const BoNRolloutRecord& record) { return bon_bits(record.chosen_indices); }

/// prod 1/(i_j(i_j+1)): the probability the expert's choices are charged.
inline double bon_rollout_value(std::span<const std::size_t> chosen_indices) {
  std::vector<double> factors;
  factors.reserve(chosen_indices.size());
  for (std::size_t i : chosen_indices) {
    const double x = static_cast<double>(i);
    factors.push_back(1.0 / (x * (x + 1.0)));
  }
  return stable_product(factors);
}

/// Importance weight of one rollout: per step, the productive fraction of
/// the full mask; multiplied over all steps.
inline double corrected_is_value(const BoNRolloutRecord& record) {
  std::vector<double> factors;
  factors.reserve(record.productivity_masks.size());
  for (const auto& mask : record.productivity_masks) {
    std::size_t productive = 0;
    for (bool b : mask) productive += b ? 1 : 0;
    factors.push_back(static_cast<double>(productive) / static_cast<double>(mask.size()));
  }
  return stable_product(factors);
}

namespace detail {

inline std::vector<BoNRolloutRecord> run_bon_rollouts(const BoNTaskSpec& task, std::size_t rollouts,
                                                      std::uint64_t master_seed, unsigned workers) {
  std::vector<BoNRolloutRecord> records(rollouts);
  parallel_for(rollouts, workers, [&](std::size_t i) {
    records[i] = simulate_bon_rollout(task, derive_seed(master_seed, kRolloutStream, i));
  });
  return records;
}

}  // namespace detail

/// Mean of prod 1/(i_j(i_j+1)) over successful rollouts. Failed rollouts are
/// excluded and counted; if all fail the estimate is absent.
inline EstimateReport expert_bon_estimate(const BoNTaskSpec& task, std::size_t rollouts,
                                          std::uint64_t master_seed,
                                          const EstimatorOptions& opts = {}) {
  detail::require_samples(rollouts, "rollouts");
  const auto records = detail::run_bon_rollouts(task, rollouts, master_seed, opts.workers);

  EstimateReport r;
  r.task_name = task.name();
  r.method = Method::expert_bon;
  r.samples_used = {rollouts};
  r.master_seed = master_seed;
  double sum = 0.0;
  std::size_t used = 0;
  for (const auto& rec : records) {
    if (!rec.success) {
      ++r.excluded_rollouts;
      continue;
    }
    sum += bon_rollout_value(rec.chosen_indices);
    ++used;
  }
  if (used == 0) {
    r.absent_reason = "all rollouts failed; a zero probability would cost infinite bits";
  } else {
    r.point_estimate = sum / static_cast<double>(used);
  }
  return r;
}

/// Mean importance weight over all rollouts, failures included as 0.
inline EstimateReport corrected_is_estimate(const BoNTaskSpec& task, std::size_t rollouts,
                                            std::uint64_t master_seed,
                                            const EstimatorOptions& opts = {}) {
  detail::require_samples(rollouts, "rollouts");
  const auto records = detail::run_bon_rollouts(task, rollouts, master_seed, opts.workers);

  EstimateReport r;
  r.task_name = task.name();
  r.method = Method::corrected_is;
  r.samples_used = {rollouts};
  r.master_seed = master_seed;
  double sum = 0.0;
  for (const auto& rec : records) sum += corrected_is_value(rec);
  r.point_estimate = sum / static_cast<double>(rollouts);
  return r;
}

/// E[1/(i(i+1)) ; a productive completion exists] for one step, with i the
/// first productive index among N_c completions.
inline double expert_bon_step_factor(double q, std::size_t completions) {
  double sum = 0.0;
  double miss = 1.0;
  for (std::size_t k = 1; k <= completions; ++k) {
    const double x = static_cast<double>(k);
    sum += miss * q / (x * (x + 1.0));
    miss *= 1.0 - q;
  }
  return sum;
}

/// Expected expert best-of-N estimate (mean over successful rollouts) in
/// the large-sample limit; nullopt when success is impossible.
inline std::optional<double> expert_bon_expected_value(const BoNTaskSpec& task) {
  std::vector<double> factors;
  std::vector<double> reach;
  for (double q : task.step_probs()) {
    factors.push_back(expert_bon_step_factor(q, task.completions_per_step()));
    reach.push_back(1.0 - std::pow(1.0 - q, static_cast<double>(task.completions_per_step())));
  }
  const double p_success = stable_product(reach);
  if (p_success <= 0.0) return std::nullopt;
  return stable_product(factors) / p_success;
}

/// Dispatches on task kind and method. Chain and graph tasks accept
/// end_to_end and milestone; best-of-N tasks accept expert_bon and
/// corrected_is. `n` is N, N per milestone or rollouts respectively.
inline EstimateReport estimate(const TaskSpec& task, Method method, GradingRegime regime,
                               std::size_t n, std::uint64_t master_seed,
                               const EstimatorOptions& opts = {}) {
  return std::visit(
      [&](const auto& t) -> EstimateReport {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, BoNTaskSpec>) {
          if (method == Method::expert_bon) return expert_bon_estimate(t, n, master_seed, opts);
          if (method == Method::corrected_is) return corrected_is_estimate(t, n, master_seed, opts);
        } else {
          if (method == Method::end_to_end) return end_to_end_estimate(t, regime, n, master_seed, opts);
          if (method == Method::milestone) return milestone_estimate(t, n, master_seed, opts);
        }
        throw SpecError("method " + std::string(to_string(method)) +
                        " does not apply to task '" + t.name() + "'");
      },
      task);
}

inline bool method_applies(const TaskSpec& task, Method method) {
  const bool bon = std::holds_alternative<BoNTaskSpec>(task);
  return bon == (method == Method::expert_bon || method == Method::corrected_is);
}

}  // namespace solverate
