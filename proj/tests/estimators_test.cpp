#include "solverate/estimators.hpp"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "solverate/stats.hpp"

namespace solverate {
namespace {

EstimatorOptions no_interval() {
  EstimatorOptions o;
  o.compute_interval = false;
  return o;
}

BoNTaskSpec bon(std::vector<double> steps, std::size_t completions = 16) {
  return BoNTaskSpec("bon", std::move(steps), completions, BoNTaskSpec::uniform_rank_dist(completions));
}

TEST(EndToEndEstimateTest, CertainTask) {
  const auto r = end_to_end_estimate(ChainTaskSpec("one", {1.0}, 30), GradingRegime::outcome_based, 100, 3);
  EXPECT_EQ(r.method, Method::end_to_end);
  EXPECT_EQ(*r.point_estimate, 1.0);
  EXPECT_EQ(r.samples_used, (std::vector<std::size_t>{100}));
  EXPECT_EQ(r.master_seed, 3u);
  ASSERT_TRUE(r.interval);
  EXPECT_LE(r.interval->low, r.interval->high);
  EXPECT_LE(r.interval->high, 1.0);
}

TEST(EndToEndEstimateTest, HalfHalfChain) {
  const auto r = end_to_end_estimate(ChainTaskSpec("c", {0.5, 0.5}, 30), GradingRegime::idealized, 10000, 77);
  EXPECT_NEAR(*r.point_estimate, 0.25, 0.013);
  ASSERT_TRUE(r.interval);
  EXPECT_GE(r.interval->low, 0.0);
  EXPECT_LE(r.interval->low, r.interval->high);
  EXPECT_TRUE(r.interval->covers(0.25));
  EXPECT_THROW(end_to_end_estimate(ChainTaskSpec("c", {0.5}, 30), GradingRegime::idealized, 0, 1), SpecError);
}

TEST(EndToEndEstimateTest, WorkerCountDoesNotChangeResult) {
  const auto task = GraphTaskSpec::uniform("g", {{"A", 0.7}, {"B", 0.8}}, 30);
  EstimatorOptions one, many;
  one.workers = 1;
  many.workers = 4;
  const auto a = end_to_end_estimate(task, GradingRegime::outcome_based, 3000, 5, one);
  const auto b = end_to_end_estimate(task, GradingRegime::outcome_based, 3000, 5, many);
  EXPECT_EQ(a.point_estimate, b.point_estimate);
  EXPECT_EQ(a.interval, b.interval);
}

TEST(MilestoneEstimateTest, PointFromCounts) {
  const std::size_t counts[] = {50, 40};
  EXPECT_NEAR(milestone_point_from_counts(counts, 100), 0.20, 1e-15);
  const std::size_t bad[] = {101};
  EXPECT_THROW(milestone_point_from_counts(bad, 100), SpecError);
}

TEST(MilestoneEstimateTest, SingleMilestoneCollapsesToEndToEnd) {
  const ChainTaskSpec task("one", {0.3}, 30);
  std::vector<double> ms, e2e;
  for (std::uint64_t r = 0; r < 400; ++r) {
    ms.push_back(*milestone_estimate(task, 200, derive_seed(1, 0, r), no_interval()).point_estimate);
    e2e.push_back(*end_to_end_estimate(task, GradingRegime::outcome_based, 200, derive_seed(2, 0, r),
                                       no_interval()).point_estimate);
  }
  const auto a = sample_moments(ms);
  const auto b = sample_moments(e2e);
  const double var = bernoulli_variance(0.3, 200);
  EXPECT_NEAR(a.mean, b.mean, 4 * std::sqrt(2 * var / 400));
  EXPECT_NEAR(a.variance / var, 1.0, 0.25);
  EXPECT_NEAR(b.variance / var, 1.0, 0.25);
}

TEST(MilestoneEstimateTest, GraphPairUnderestimatesOutcomeTruth) {
  const auto task = GraphTaskSpec::uniform("pair", {{"M1", 0.8}, {"M2", 0.8}}, 30);
  const auto r = milestone_estimate(task, 10000, 4);
  EXPECT_NEAR(*r.point_estimate, 0.32, 0.02);
  EXPECT_LT(*r.point_estimate, exact_solve_rate(task, GradingRegime::outcome_based));
  ASSERT_EQ(r.stage_successes.size(), 2u);
  EXPECT_NEAR(r.stage_successes[0] / 10000.0, 0.4, 0.02);
  EXPECT_NEAR(static_cast<double>(r.stage_successes[1]) / 10000.0, 0.8, 0.02);
  ASSERT_TRUE(r.interval);
  EXPECT_LT(r.interval->high, 0.64);
}

TEST(MilestoneEstimateTest, ZeroStageTruncates) {
  const auto r = milestone_estimate(ChainTaskSpec("dead", {0.0, 0.5, 0.5}, 30), 100, 1);
  EXPECT_EQ(*r.point_estimate, 0.0);
  EXPECT_TRUE(r.truncated);
  EXPECT_EQ(r.stage_successes, (std::vector<std::size_t>{0}));
  EXPECT_EQ(r.samples_used, (std::vector<std::size_t>{100}));
  ASSERT_TRUE(r.interval);
  EXPECT_LT(r.interval->high, 0.05);
}

TEST(MilestoneEstimateTest, ExhaustedBudgetFailsLaterStages) {
  const auto r = milestone_estimate(ChainTaskSpec("tight", {1.0, 1.0, 1.0}, 2), 50, 1, no_interval());
  EXPECT_EQ(r.stage_successes, (std::vector<std::size_t>{50, 50, 0}));
  EXPECT_EQ(*r.point_estimate, 0.0);
}

TEST(MilestoneEstimateTest, IntervalOrderedAndDeterministic) {
  const ChainTaskSpec task("c", {0.6, 0.7, 0.5}, 30);
  EstimatorOptions one, many;
  many.workers = 3;
  const auto a = milestone_estimate(task, 300, 9, one);
  const auto b = milestone_estimate(task, 300, 9, many);
  EXPECT_EQ(a.point_estimate, b.point_estimate);
  EXPECT_EQ(a.stage_successes, b.stage_successes);
  EXPECT_EQ(a.interval, b.interval);
  ASSERT_TRUE(a.interval);
  EXPECT_LE(a.interval->low, a.interval->high);
  EXPECT_GE(a.interval->low, 0.0);
  EXPECT_LE(a.interval->high, 1.0);
}

TEST(BonValueTest, FormulaAndBits) {
  const std::size_t ones[] = {1, 1, 1};
  EXPECT_DOUBLE_EQ(bon_rollout_value(ones), 0.125);
  const std::size_t three[] = {3};
  EXPECT_NEAR(bon_rollout_value(three), 1.0 / 12.0, 1e-15);
  EXPECT_NEAR(bon_bits(three), 3.584962500721156, 1e-12);

  const std::size_t one[] = {1};
  EXPECT_EQ(bon_bits(one), 1.0);
  EXPECT_EQ(bon_bits(std::span<const std::size_t>{}), 0.0);
  const std::size_t one_three[] = {1, 3};
  EXPECT_NEAR(bon_bits(one_three), 1.0 + std::log2(12.0), 1e-12);
}

TEST(BonValueTest, BitsRoundTripToValue) {
  Rng gen(12);
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(gen.uniform() * 12));
    for (auto& x : idx) x = 1 + static_cast<std::size_t>(gen.uniform() * 16);
    EXPECT_NEAR(bits_to_prob(bon_bits(idx)), bon_rollout_value(idx), 1e-9);
  }
}

TEST(BonValueTest, PerStepFactorAtMostHalfAndMonotone) {
  Rng gen(13);
  for (int i = 0; i < 500; ++i) {
    std::vector<std::size_t> idx(1 + static_cast<std::size_t>(gen.uniform() * 10));
    for (auto& x : idx) x = 1 + static_cast<std::size_t>(gen.uniform() * 16);
    const double v = bon_rollout_value(idx);
    EXPECT_LE(v, std::pow(0.5, static_cast<double>(idx.size())));
    const auto j = static_cast<std::size_t>(gen.uniform() * idx.size());
    auto bumped = idx;
    ++bumped[j];
    EXPECT_LT(bon_rollout_value(bumped), v);
  }
}

TEST(ExpertBonEstimateTest, SingleStepNinety) {
  const auto task = bon({0.9});
  const auto r = expert_bon_estimate(task, 10000, 21);
  EXPECT_EQ(r.method, Method::expert_bon);
  ASSERT_TRUE(r.point_estimate);
  EXPECT_NEAR(*r.point_estimate, 0.4658, 0.01);
  EXPECT_LT(*r.point_estimate, 0.9);
  EXPECT_FALSE(r.interval);
}

TEST(ExpertBonEstimateTest, AnalyticFactorMatchesMaskEnumeration) {
  for (double q : {0.05, 0.3, 0.5, 0.77, 0.9, 1.0}) {
    EXPECT_NEAR(expert_bon_step_factor(q, 16), testing::bon_step_factor_by_enumeration(q, 16), 1e-12) << q;
  }
  // Frozen from the enumeration oracle above.
  EXPECT_NEAR(expert_bon_step_factor(0.9, 16), 0.46579823171606966, 1e-12);
  EXPECT_NEAR(expert_bon_step_factor(0.5, 16), 0.30685277415916934, 1e-12);
  EXPECT_NEAR(*expert_bon_expected_value(bon({0.9})), 0.4657982317160697, 1e-12);
}

TEST(ExpertBonEstimateTest, EveryRolloutValueBoundedByHalfPowers) {
  const auto task = bon({0.95, 0.99, 0.9});
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    const auto rec = simulate_bon_rollout(task, seed);
    if (!rec.success) continue;
    EXPECT_LE(bon_rollout_value(rec.chosen_indices), 0.125);
    ++checked;
  }
  EXPECT_GT(checked, 1900u);
}

TEST(ExpertBonEstimateTest, AllFailuresGiveAbsentEstimate) {
  const auto r = expert_bon_estimate(bon({0.0}), 50, 1);
  EXPECT_FALSE(r.point_estimate);
  EXPECT_FALSE(r.absent_reason.empty());
  EXPECT_EQ(r.excluded_rollouts, 50u);
}

TEST(ExpertBonEstimateTest, FailuresExcludedFromMean) {
  // q = 0.1 with 4 completions fails ~66% of the time; the mean covers
  // successes only.
  const auto task = bon({0.1}, 4);
  const auto r = expert_bon_estimate(task, 20000, 6);
  const double p_fail = std::pow(0.9, 4);
  EXPECT_NEAR(static_cast<double>(r.excluded_rollouts) / 20000, p_fail, 0.015);
  EXPECT_NEAR(*r.point_estimate, *expert_bon_expected_value(task), 0.01);
}

TEST(CorrectedIsEstimateTest, Values) {
  EXPECT_EQ(*corrected_is_estimate(bon({1.0, 1.0}), 100, 1).point_estimate, 1.0);
  EXPECT_NEAR(*corrected_is_estimate(bon({0.9}), 10000, 2).point_estimate, 0.9, 0.0075);
  EXPECT_NEAR(*corrected_is_estimate(bon({0.9, 0.8}), 10000, 3).point_estimate, 0.72, 0.01);
}

TEST(CorrectedIsEstimateTest, UnbiasedAcrossReplications) {
  const auto task = bon({0.6, 0.7, 0.5});
  const double truth = 0.21;
  std::vector<double> means;
  for (std::uint64_t r = 0; r < 200; ++r) {
    means.push_back(*corrected_is_estimate(task, 500, derive_seed(4, 0, r)).point_estimate);
  }
  const auto m = sample_moments(means);
  EXPECT_NEAR(m.mean, truth, 3 * std::sqrt(m.variance / 200));
}

TEST(CorrectedIsEstimateTest, ZeroWhenAnyMaskIsEmpty) {
  BoNRolloutRecord rec;
  rec.productivity_masks = {{true, false}, {false, false}};
  EXPECT_EQ(corrected_is_value(rec), 0.0);
  rec.productivity_masks = {{true, false}, {true, true}};
  EXPECT_EQ(corrected_is_value(rec), 0.5);
}

TEST(EstimateDispatchTest, RejectsMismatchedMethod) {
  const TaskSpec chain = ChainTaskSpec("c", {0.5}, 30);
  const TaskSpec b = bon({0.5});
  EXPECT_THROW(estimate(chain, Method::expert_bon, GradingRegime::idealized, 10, 1), SpecError);
  EXPECT_THROW(estimate(b, Method::milestone, GradingRegime::idealized, 10, 1), SpecError);
  EXPECT_NO_THROW(estimate(b, Method::corrected_is, GradingRegime::idealized, 10, 1));
  EXPECT_EQ(parse_method("milestone"), Method::milestone);
  EXPECT_THROW(parse_method("bogus"), SpecError);
}

}  // namespace
}  // namespace solverate
