#pragma once

// Replication experiments that measure estimator bias, variance and
// interval coverage against the exact oracle.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "solverate/estimators.hpp"
#include "solverate/parallel.hpp"
#include "solverate/stats.hpp"
#include "solverate/task_model.hpp"

namespace solverate {

struct SampleBudgets {
  std::size_t n_end_to_end = 500;
  std::size_t n_per_milestone = 500;
  std::size_t bon_rollouts = 1000;
};

struct SuiteConfig {
  std::vector<TaskSpec> tasks;
  SampleBudgets budgets;
  std::size_t replications = 100;
  std::uint64_t master_seed = 0;
  std::vector<GradingRegime> regimes{GradingRegime::idealized, GradingRegime::outcome_based};
  std::vector<Method> methods{Method::end_to_end, Method::milestone, Method::expert_bon,
                              Method::corrected_is};
  /// 0 selects hardware concurrency. Results do not depend on this.
  unsigned workers = 1;
  bool compute_intervals = true;

  void validate() const {
    if (replications == 0) throw SpecError("replications must be at least 1");
    if (budgets.n_end_to_end == 0 || budgets.n_per_milestone == 0 || budgets.bon_rollouts == 0) {
      throw SpecError("sample budgets must be at least 1");
    }
  }
};

struct ReplicationSummary {
  std::string task_name;
  Method method = Method::end_to_end;
  /// Empty for best-of-N methods, whose truth does not depend on grading.
  std::optional<GradingRegime> regime;
  std::size_t replications = 0;
  /// Absent only if every replication failed to produce an estimate.
  std::optional<double> mean_estimate;
  std::optional<double> empirical_variance;
  double oracle_truth = 0.0;
  std::optional<double> bias;
  /// Fraction of replications whose interval contains the truth (inclusive).
  std::optional<double> coverage;
  /// Expert best-of-N replications in which every rollout failed.
  std::size_t failed_replications = 0;
};

inline std::size_t budget_for(Method method, const SampleBudgets& b) {
  switch (method) {
    case Method::end_to_end: return b.n_end_to_end;
    case Method::milestone: return b.n_per_milestone;
    case Method::expert_bon:
    case Method::corrected_is: return b.bon_rollouts;
  }
  return 0;
}

/// Seed of replication r of (task, method). Independent of grading regime
/// so that regimes are compared on the same rollouts.
inline std::uint64_t replication_seed(std::uint64_t master, std::size_t task_index, Method method,
                                      std::size_t replication) {
  return derive_seed(derive_seed(master, task_index), static_cast<std::uint64_t>(method) + 16,
                     replication);
}

/// Runs R independent estimates of one (task, method, regime) in parallel.
inline std::vector<EstimateReport> replicate(const TaskSpec& task, std::size_t task_index,
                                             Method method, GradingRegime regime,
                                             const SuiteConfig& suite) {
  EstimatorOptions opts;
  opts.workers = 1;
  opts.compute_interval = suite.compute_intervals;
  const std::size_t n = budget_for(method, suite.budgets);
  std::vector<EstimateReport> reports(suite.replications);
  parallel_for(suite.replications, suite.workers, [&](std::size_t r) {
    reports[r] = estimate(task, method, regime, n,
                          replication_seed(suite.master_seed, task_index, method, r), opts);
  });
  return reports;
}

inline ReplicationSummary summarize(const TaskSpec& task, Method method,
                                    std::optional<GradingRegime> regime,
                                    std::span<const EstimateReport> reports, double truth) {
  ReplicationSummary s;
  s.task_name = task_name(task);
  s.method = method;
  s.regime = regime;
  s.replications = reports.size();
  s.oracle_truth = truth;

  std::vector<double> points;
  std::size_t with_interval = 0;
  std::size_t covering = 0;
  for (const auto& r : reports) {
    if (!r.point_estimate) {
      ++s.failed_replications;
      continue;
    }
    points.push_back(*r.point_estimate);
    if (r.interval) {
      ++with_interval;
      if (r.interval->covers(truth)) ++covering;
    }
  }
  if (!points.empty()) {
    const auto m = sample_moments(points);
    s.mean_estimate = m.mean;
    s.empirical_variance = m.variance;
    s.bias = m.mean - truth;
  }
  if (with_interval > 0) {
    s.coverage = static_cast<double>(covering) / static_cast<double>(with_interval);
  }
  return s;
}

/// One summary per applicable (task, method, regime); best-of-N methods get
/// a single row with no regime. Milestone replications are shared across
/// regimes since the estimate does not depend on grading.
inline std::vector<ReplicationSummary> run_replications(const SuiteConfig& suite) {
  suite.validate();
  std::vector<ReplicationSummary> out;
  for (std::size_t ti = 0; ti < suite.tasks.size(); ++ti) {
    const TaskSpec& task = suite.tasks[ti];
    for (Method method : suite.methods) {
      if (!method_applies(task, method)) continue;
      if (std::holds_alternative<BoNTaskSpec>(task)) {
        const auto reports = replicate(task, ti, method, GradingRegime::outcome_based, suite);
        out.push_back(summarize(task, method, std::nullopt, reports,
                                exact_solve_rate(task, GradingRegime::outcome_based)));
        continue;
      }
      std::vector<EstimateReport> shared;
      if (method == Method::milestone) {
        shared = replicate(task, ti, method, GradingRegime::idealized, suite);
      }
      for (GradingRegime regime : suite.regimes) {
        const double truth = exact_solve_rate(task, regime);
        if (method == Method::milestone) {
          out.push_back(summarize(task, method, regime, shared, truth));
        } else {
          const auto reports = replicate(task, ti, method, regime, suite);
          out.push_back(summarize(task, method, regime, reports, truth));
        }
      }
    }
  }
  return out;
}

struct CalibrationRow {
  std::string task_name;
  /// "synthetic" for simulated tasks, "fixture" for replayed published rows.
  std::string source = "synthetic";
  std::size_t replications = 0;
  double idealized_truth = 0.0;
  double outcome_truth = 0.0;
  double milestone_mean = 0.0;
  /// Mean 2.5% quantile across replications; absent for fixture rows.
  std::optional<double> milestone_q025;
  /// Mean 97.5% quantile across replications.
  double milestone_q975 = 0.0;
  /// Fractions of replications whose interval covers each truth.
  double idealized_coverage = 0.0;
  double outcome_coverage = 0.0;
  /// Fraction of replications whose 97.5% quantile lies below the outcome truth.
  double outcome_above_q975 = 0.0;
};

struct CalibrationTable {
  std::vector<CalibrationRow> rows;
};

/// Milestone estimates of every chain and graph task in the suite, set
/// against both grading regimes' exact truths.
inline CalibrationTable calibration_experiment(const SuiteConfig& suite) {
  suite.validate();
  CalibrationTable table;
  SuiteConfig with_intervals = suite;
  with_intervals.compute_intervals = true;
  for (std::size_t ti = 0; ti < suite.tasks.size(); ++ti) {
    const TaskSpec& task = suite.tasks[ti];
    if (std::holds_alternative<BoNTaskSpec>(task)) continue;
    const auto reports = replicate(task, ti, Method::milestone, GradingRegime::idealized, with_intervals);

    CalibrationRow row;
    row.task_name = task_name(task);
    row.replications = reports.size();
    row.idealized_truth = exact_solve_rate(task, GradingRegime::idealized);
    row.outcome_truth = exact_solve_rate(task, GradingRegime::outcome_based);
    double sum = 0.0, lo = 0.0, hi = 0.0;
    std::size_t cov_ideal = 0, cov_outcome = 0, above = 0;
    for (const auto& r : reports) {
      sum += *r.point_estimate;
      lo += r.interval->low;
      hi += r.interval->high;
      cov_ideal += r.interval->covers(row.idealized_truth) ? 1 : 0;
      cov_outcome += r.interval->covers(row.outcome_truth) ? 1 : 0;
      above += row.outcome_truth > r.interval->high ? 1 : 0;
    }
    const auto count = static_cast<double>(reports.size());
    row.milestone_mean = sum / count;
    row.milestone_q025 = lo / count;
    row.milestone_q975 = hi / count;
    row.idealized_coverage = static_cast<double>(cov_ideal) / count;
    row.outcome_coverage = static_cast<double>(cov_outcome) / count;
    row.outcome_above_q975 = static_cast<double>(above) / count;
    table.rows.push_back(std::move(row));
  }
  return table;
}

struct BonBiasRow {
  std::string task_name;
  std::string source = "synthetic";
  double truth = 0.0;
  /// Mean over replications that produced an estimate.
  std::optional<double> expert_bon_mean;
  /// Large-sample expectation of the expert estimate.
  std::optional<double> expert_bon_expected;
  std::optional<double> corrected_is_mean;
  std::size_t failed_replications = 0;
  bool underestimates = false;
};

struct BonBiasTable {
  std::vector<BonBiasRow> rows;
};

/// Expert best-of-N against the corrected importance-sampling estimator on
/// every best-of-N task in the suite.
inline BonBiasTable bon_bias_experiment(const SuiteConfig& suite) {
  suite.validate();
  BonBiasTable table;
  for (std::size_t ti = 0; ti < suite.tasks.size(); ++ti) {
    const auto* task = std::get_if<BoNTaskSpec>(&suite.tasks[ti]);
    if (!task) continue;
    const TaskSpec& spec = suite.tasks[ti];
    const double truth = exact_solve_rate(*task);
    const auto expert = summarize(spec, Method::expert_bon, std::nullopt,
                                  replicate(spec, ti, Method::expert_bon, GradingRegime::outcome_based, suite),
                                  truth);
    const auto corrected = summarize(spec, Method::corrected_is, std::nullopt,
                                     replicate(spec, ti, Method::corrected_is, GradingRegime::outcome_based, suite),
                                     truth);
    BonBiasRow row;
    row.task_name = task->name();
    row.truth = truth;
    row.expert_bon_mean = expert.mean_estimate;
    row.expert_bon_expected = expert_bon_expected_value(*task);
    row.corrected_is_mean = corrected.mean_estimate;
    row.failed_replications = expert.failed_replications;
    row.underestimates = expert.mean_estimate && *expert.mean_estimate < truth;
    table.rows.push_back(std::move(row));
  }
  return table;
}

struct TrivialStepReport {
  std::string task_name;
  std::size_t extra_steps = 0;
  std::size_t rollouts = 0;
  std::uint64_t seed = 0;
  double base_truth = 0.0;
  double extended_truth = 0.0;
  /// Means over successful rollouts.
  std::optional<double> base_mean_bits;
  std::optional<double> extended_mean_bits;
  std::optional<double> base_bon_mean;
  std::optional<double> extended_bon_mean;
  std::size_t failed_rollouts = 0;
  /// Largest |extended bits - base bits - extra_steps| over all rollouts.
  double max_bits_shift_error = 0.0;
  /// Every rollout: same success, same base choices, then index 1 on every added step.
  bool every_rollout_shifted_exactly = true;
};

/// Appends `extra_trivial_steps` steps with q = 1 to `base` and runs both
/// tasks on the same rollout seeds. Per-step mask streams make the base
/// steps' masks identical across the two runs.
inline TrivialStepReport trivial_step_experiment(const BoNTaskSpec& base, std::size_t extra_trivial_steps,
                                                 std::size_t rollouts, std::uint64_t seed,
                                                 unsigned workers = 1) {
  if (rollouts == 0) throw SpecError("rollouts must be at least 1");
  std::vector<double> steps(base.step_probs().begin(), base.step_probs().end());
  steps.insert(steps.end(), extra_trivial_steps, 1.0);
  const BoNTaskSpec extended(base.name(), steps, base.completions_per_step(),
                             std::vector<double>(base.agent_rank_dist().begin(), base.agent_rank_dist().end()));

  const auto base_records = detail::run_bon_rollouts(base, rollouts, seed, workers);
  const auto ext_records = detail::run_bon_rollouts(extended, rollouts, seed, workers);

  TrivialStepReport rep;
  rep.task_name = base.name();
  rep.extra_steps = extra_trivial_steps;
  rep.rollouts = rollouts;
  rep.seed = seed;
  rep.base_truth = exact_solve_rate(base);
  rep.extended_truth = exact_solve_rate(extended);

  std::vector<double> base_bits, ext_bits, base_vals, ext_vals;
  const auto k = static_cast<double>(extra_trivial_steps);
  for (std::size_t i = 0; i < rollouts; ++i) {
    const auto& b = base_records[i];
    const auto& e = ext_records[i];
    if (b.success != e.success) rep.every_rollout_shifted_exactly = false;
    if (!e.success) {
      ++rep.failed_rollouts;
      continue;
    }
    const bool prefix_same = e.chosen_indices.size() == b.chosen_indices.size() + extra_trivial_steps &&
                             std::equal(b.chosen_indices.begin(), b.chosen_indices.end(), e.chosen_indices.begin()) &&
                             std::all_of(e.chosen_indices.begin() + static_cast<std::ptrdiff_t>(b.chosen_indices.size()),
                                         e.chosen_indices.end(), [](std::size_t idx) { return idx == 1; });
    if (!prefix_same) rep.every_rollout_shifted_exactly = false;
    const double err = std::abs(e.bits_total - b.bits_total - k);
    rep.max_bits_shift_error = std::max(rep.max_bits_shift_error, err);
    if (err > 1e-9) rep.every_rollout_shifted_exactly = false;
    base_bits.push_back(b.bits_total);
    ext_bits.push_back(e.bits_total);
    base_vals.push_back(bon_rollout_value(b.chosen_indices));
    ext_vals.push_back(bon_rollout_value(e.chosen_indices));
  }
  if (!base_bits.empty()) {
    rep.base_mean_bits = sample_moments(base_bits).mean;
    rep.extended_mean_bits = sample_moments(ext_bits).mean;
    rep.base_bon_mean = sample_moments(base_vals).mean;
    rep.extended_bon_mean = sample_moments(ext_vals).mean;
  }
  return rep;
}

struct VarianceComparison {
  std::string task_name;
  std::size_t n = 0;
  std::size_t replications = 0;
  /// Closed-form variances.
  VarianceBreakdown formula;
  /// Sample variances over the replications; per_stage_terms left empty.
  VarianceBreakdown empirical;
  /// Empirical within 15% relative of the formula (both zero counts as agreement).
  bool end_to_end_agrees = false;
  bool milestone_agrees = false;
};

inline constexpr double kVarianceAgreementTolerance = 0.15;

inline bool relative_agreement(double empirical, double formula, double tol) {
  if (formula == 0.0) return std::abs(empirical) <= 1e-15;
  return std::abs(empirical - formula) <= tol * std::abs(formula);
}

/// Empirical variance of both estimators over R replications next to the
/// closed forms.
inline VarianceComparison variance_comparison_experiment(const ChainTaskSpec& chain, std::size_t n,
                                                         std::size_t replications, std::uint64_t seed,
                                                         unsigned workers = 1) {
  if (n == 0 || replications == 0) throw SpecError("N and R must be at least 1");
  VarianceComparison out;
  out.task_name = chain.name();
  out.n = n;
  out.replications = replications;
  out.formula = variance_breakdown(chain.milestone_probs(), n);

  EstimatorOptions opts;
  opts.compute_interval = false;
  std::vector<double> e2e(replications), ms(replications);
  parallel_for(replications, workers, [&](std::size_t r) {
    e2e[r] = *end_to_end_estimate(chain, GradingRegime::outcome_based, n,
                                  derive_seed(seed, 1, r), opts).point_estimate;
    ms[r] = *milestone_estimate(chain, n, derive_seed(seed, 2, r), opts).point_estimate;
  });
  out.empirical.end_to_end_variance = sample_moments(e2e).variance;
  out.empirical.milestone_variance = sample_moments(ms).variance;
  out.empirical.inequality_holds =
      out.empirical.milestone_variance <= out.empirical.end_to_end_variance + 1e-12;
  out.end_to_end_agrees = relative_agreement(out.empirical.end_to_end_variance,
                                             out.formula.end_to_end_variance, kVarianceAgreementTolerance);
  out.milestone_agrees = relative_agreement(out.empirical.milestone_variance,
                                            out.formula.milestone_variance, kVarianceAgreementTolerance);
  return out;
}

/// Ten tasks whose exact outcome-graded truths span roughly [0.01, 0.96]:
/// four chains, three order-free graphs, three best-of-N models.
inline std::vector<TaskSpec> default_tasks() {
  std::vector<TaskSpec> tasks;
  tasks.emplace_back(ChainTaskSpec("chain_long", std::vector<double>(8, 0.995), 30));
  tasks.emplace_back(ChainTaskSpec("chain_pair", {0.8, 0.75}, 30));
  tasks.emplace_back(ChainTaskSpec("chain_triple", {0.9, 0.8, 0.7}, 30));
  tasks.emplace_back(ChainTaskSpec("chain_rare", {0.25, 0.2, 0.2}, 30));
  tasks.emplace_back(GraphTaskSpec::uniform("graph_pair", {{"M1", 0.8}, {"M2", 0.8}}, 30));
  tasks.emplace_back(GraphTaskSpec::uniform("graph_triple", {{"M1", 0.9}, {"M2", 0.9}, {"M3", 0.9}}, 30));
  tasks.emplace_back(GraphTaskSpec("graph_pair_skewed", {{"M1", 0.7}, {"M2", 0.7}}, {"M1", "M2"},
                                   {{{"M1", "M2"}, 0.7}, {{"M2", "M1"}, 0.3}}, 30));
  tasks.emplace_back(BoNTaskSpec("bon_easy", {0.9}, 16, BoNTaskSpec::uniform_rank_dist(16)));
  tasks.emplace_back(BoNTaskSpec("bon_mid", {0.8, 0.6}, 16, BoNTaskSpec::uniform_rank_dist(16)));
  tasks.emplace_back(BoNTaskSpec("bon_hard", {0.7, 0.6, 0.5, 0.5}, 16, BoNTaskSpec::uniform_rank_dist(16)));
  return tasks;
}

}  // namespace solverate
