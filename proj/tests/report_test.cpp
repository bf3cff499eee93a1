#include "solverate/report.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "solverate/config.hpp"

namespace solverate {
namespace {

const std::filesystem::path kData = SOLVERATE_DATA_DIR;
const std::filesystem::path kConfigs = SOLVERATE_CONFIG_DIR;

std::string fixture_text() {
  std::ifstream in(kData / "published_results.csv");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<PublishedResultsRow> parse_fixture(const std::string& text) {
  std::istringstream in(text);
  return read_published_table(in);
}

std::string replace_once(std::string text, const std::string& from, const std::string& to) {
  const auto pos = text.find(from);
  EXPECT_NE(pos, std::string::npos) << from;
  return text.replace(pos, from.size(), to);
}

// --- Task configs ---------------------------------------------------------

TEST(ConfigTest, LoadsShippedTaskFiles) {
  const auto chain = std::get<ChainTaskSpec>(load_task(kConfigs / "chain.json"));
  EXPECT_EQ(chain.name(), "chain_half_half");
  EXPECT_EQ(exact_solve_rate(chain, GradingRegime::idealized), 0.25);

  const auto skewed = std::get<GraphTaskSpec>(load_task(kConfigs / "graph_skewed.json"));
  EXPECT_EQ(skewed.order_policy().size(), 2u);
  EXPECT_NEAR(exact_solve_rate(skewed, GradingRegime::outcome_based), 0.49, 1e-12);

  const auto graph = std::get<GraphTaskSpec>(load_task(kConfigs / "graph_pair.json"));
  EXPECT_NEAR(exact_solve_rate(graph, GradingRegime::outcome_based), 0.64, 1e-12);
  EXPECT_NEAR(exact_solve_rate(graph, GradingRegime::idealized), 0.32, 1e-12);

  const auto bon = std::get<BoNTaskSpec>(load_task(kConfigs / "bon_single.json"));
  EXPECT_EQ(bon.completions_per_step(), 16u);
  EXPECT_EQ(exact_solve_rate(bon), 0.9);
}

TEST(ConfigTest, LoadsSuiteWithFileAndInlineTasks) {
  const auto suite = load_suite(kConfigs / "small_suite.json");
  ASSERT_EQ(suite.tasks.size(), 4u);
  EXPECT_EQ(task_name(suite.tasks[3]), "bon_two_step");
  EXPECT_EQ(suite.budgets.n_end_to_end, 200u);
  EXPECT_EQ(suite.budgets.bon_rollouts, 500u);
  EXPECT_EQ(suite.replications, 50u);
  EXPECT_EQ(suite.regimes.size(), 2u);
}

TEST(ConfigTest, RejectsMalformedTasks) {
  using nlohmann::json;
  const json good = {{"kind", "chain"}, {"name", "c"}, {"milestone_probs", {0.5}}, {"message_budget", 3}};
  EXPECT_NO_THROW(task_from_json(good));

  auto unknown_key = good;
  unknown_key["colour"] = "red";
  EXPECT_THROW(task_from_json(unknown_key), ConfigError);

  auto missing = good;
  missing.erase("message_budget");
  EXPECT_THROW(task_from_json(missing), ConfigError);

  auto out_of_range = good;
  out_of_range["milestone_probs"] = {1.5};
  EXPECT_THROW(task_from_json(out_of_range), ConfigError);

  auto wrong_kind = good;
  wrong_kind["kind"] = "tree";
  EXPECT_THROW(task_from_json(wrong_kind), ConfigError);

  const json bad_policy = {{"kind", "graph"},
                           {"name", "g"},
                           {"milestones", {{{"id", "A"}, {"prob", 0.5}}, {{"id", "B"}, {"prob", 0.5}}}},
                           {"canonical_order", {"A", "B"}},
                           {"order_policy", {{{"order", {"A", "B"}}, {"weight", 0.6}}}},
                           {"message_budget", 5}};
  EXPECT_THROW(task_from_json(bad_policy), ConfigError);

  const json bon_budget = {{"kind", "bon"},      {"name", "b"},
                           {"steps", {0.5, 0.5}}, {"completions_per_step", 4},
                           {"agent_rank_dist", "uniform"}, {"message_budget", 1}};
  EXPECT_THROW(task_from_json(bon_budget), ConfigError);

  EXPECT_THROW(suite_from_json(json{{"tasks", {good}}, {"replications", 0}}), ConfigError);
  EXPECT_THROW(suite_from_json(json{{"tasks", {good}}, {"methods", {"guess"}}}), ConfigError);
  EXPECT_THROW(load_task(kConfigs / "does_not_exist.json"), ConfigError);
}

// --- CSV helpers ----------------------------------------------------------

TEST(CsvTest, FieldsAndHeaders) {
  EXPECT_EQ(format_number(0.25), "0.250000");
  EXPECT_EQ(format_optional(std::nullopt), "");
  EXPECT_THROW(csv_field("a,b"), std::invalid_argument);
  EXPECT_THROW(csv_field("a\"b"), std::invalid_argument);

  std::istringstream reordered("method,name,point,ci_low,ci_high,samples,seed,excluded\n");
  EXPECT_THROW(read_estimates_csv(reordered), ParseError);
  std::istringstream empty("");
  EXPECT_THROW(read_estimates_csv(empty), ParseError);
}

TEST(CsvTest, EstimateRoundTrip) {
  EstimateReport a;
  a.task_name = "scavenger_hunt";
  a.method = Method::end_to_end;
  a.point_estimate = 0.460;
  a.interval = Interval{0.36, 0.56};
  a.samples_used = {100};
  a.master_seed = 18446744073709551615ull;
  EstimateReport b;
  b.task_name = "never";
  b.method = Method::expert_bon;
  b.absent_reason = "all rollouts failed";
  b.samples_used = {50};
  b.excluded_rollouts = 50;
  EstimateReport c = milestone_estimate(ChainTaskSpec("m", {0.6, 0.7}, 30), 200, 3);

  std::ostringstream out;
  write_estimates_csv(out, {a, b, c});
  std::istringstream in(out.str());
  const auto back = read_estimates_csv(in);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[0].task_name, "scavenger_hunt");
  EXPECT_EQ(*back[0].point_estimate, 0.46);
  EXPECT_EQ(back[0].master_seed, a.master_seed);
  EXPECT_EQ(back[0].interval, a.interval);
  EXPECT_FALSE(back[1].point_estimate);
  EXPECT_FALSE(back[1].interval);
  EXPECT_EQ(back[1].excluded_rollouts, 50u);
  EXPECT_EQ(back[2].method, Method::milestone);
  EXPECT_EQ(back[2].samples_used, (std::vector<std::size_t>{200, 200}));
  EXPECT_NEAR(*back[2].point_estimate, *c.point_estimate, 5e-7);

  std::ostringstream again;
  write_estimates_csv(again, back);
  EXPECT_EQ(again.str(), out.str());
}

TEST(CsvTest, EstimateRowErrorsNameRowAndColumn) {
  std::istringstream bad(
      "name,method,point,ci_low,ci_high,samples,seed,excluded\n"
      "t,end_to_end,0.5,,,10,1,0\n"
      "t,end_to_end,abc,,,10,1,0\n");
  try {
    read_estimates_csv(bad);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("point"), std::string::npos) << e.what();
  }
  std::istringstream half("name,method,point,ci_low,ci_high,samples,seed,excluded\nt,end_to_end,0.5,0.1,,10,1,0\n");
  EXPECT_THROW(read_estimates_csv(half), ParseError);
  std::istringstream short_row("name,method,point,ci_low,ci_high,samples,seed,excluded\nt,end_to_end\n");
  EXPECT_THROW(read_estimates_csv(short_row), ParseError);
}

TEST(CsvTest, EstimateJson) {
  const auto r = milestone_estimate(ChainTaskSpec("m", {0.0, 0.7}, 30), 20, 3);
  const auto j = to_json(r);
  EXPECT_EQ(j["method"], "milestone");
  EXPECT_EQ(j["truncated"], true);
  EstimateReport absent;
  absent.method = Method::expert_bon;
  absent.absent_reason = "all rollouts failed";
  EXPECT_TRUE(to_json(absent)["point_estimate"].is_null());
  EXPECT_EQ(to_json(absent)["absent_reason"], "all rollouts failed");
}

TEST(CsvTest, SummaryRoundTrip) {
  SuiteConfig s;
  s.tasks = {ChainTaskSpec("c", {0.6}, 30), BoNTaskSpec("b", {0.0}, 2, BoNTaskSpec::uniform_rank_dist(2))};
  s.replications = 3;
  s.budgets = {20, 20, 20};
  const auto rows = run_replications(s);
  std::ostringstream out;
  write_summaries_csv(out, rows);
  std::istringstream in(out.str());
  const auto back = read_summaries_csv(in);
  ASSERT_EQ(back.size(), rows.size());
  const auto& expert = back[back.size() - 2];
  EXPECT_EQ(expert.method, Method::expert_bon);
  EXPECT_FALSE(expert.regime);
  EXPECT_FALSE(expert.mean_estimate);
  EXPECT_EQ(expert.failed_replications, 3u);
  EXPECT_EQ(*back.back().mean_estimate, 0.0);
  std::ostringstream again;
  write_summaries_csv(again, back);
  EXPECT_EQ(again.str(), out.str());
}

TEST(CsvTest, CalibrationAndBonBiasRoundTrip) {
  const auto rows = parse_fixture(fixture_text());
  const auto cal = calibration_from_fixture(rows);
  std::ostringstream out;
  write_calibration_csv(out, cal);
  std::istringstream in(out.str());
  const auto cal_back = read_calibration_csv(in);
  ASSERT_EQ(cal_back.rows.size(), 10u);
  EXPECT_FALSE(cal_back.rows[0].milestone_q025);
  std::ostringstream again;
  write_calibration_csv(again, cal_back);
  EXPECT_EQ(again.str(), out.str());

  const auto bias = bon_bias_from_fixture(rows);
  std::ostringstream bout;
  write_bon_bias_csv(bout, bias);
  std::istringstream bin(bout.str());
  const auto bias_back = read_bon_bias_csv(bin);
  ASSERT_EQ(bias_back.rows.size(), 10u);
  std::ostringstream bagain;
  write_bon_bias_csv(bagain, bias_back);
  EXPECT_EQ(bagain.str(), bout.str());
}

TEST(CsvTest, TrivialStepAndVarianceRoundTrip) {
  const BoNTaskSpec base("b", {0.9}, 16, BoNTaskSpec::uniform_rank_dist(16));
  const std::vector<TrivialStepReport> reps{trivial_step_experiment(base, 0, 100, 1),
                                            trivial_step_experiment(base, 2, 100, 1)};
  std::ostringstream out;
  write_trivial_step_csv(out, reps);
  std::istringstream in(out.str());
  const auto back = read_trivial_step_csv(in);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].extra_steps, 2u);
  EXPECT_TRUE(back[1].every_rollout_shifted_exactly);
  std::ostringstream again;
  write_trivial_step_csv(again, back);
  EXPECT_EQ(again.str(), out.str());

  const auto v = variance_comparison_experiment(ChainTaskSpec("half", {0.5, 0.5}, 30), 100, 50, 2);
  const auto rows = variance_rows(v);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].name, "half:empirical");
  std::ostringstream vout;
  write_variance_csv(vout, rows);
  EXPECT_NE(vout.str().find("half,0.001875,0.001250,true\n"), std::string::npos) << vout.str();
  std::istringstream vin(vout.str());
  const auto vback = read_variance_csv(vin);
  ASSERT_EQ(vback.size(), 2u);
  EXPECT_EQ(vback[0].v_end_to_end, 0.001875);
}

// --- Published results fixture --------------------------------------------

TEST(FixtureTest, IngestsAllPublishedRows) {
  const auto rows = ingest_published_table(kData / "published_results.csv");
  ASSERT_EQ(rows.size(), 10u);
  const auto find = [&](const std::string& name) {
    for (const auto& r : rows) {
      if (r.task == name) return r;
    }
    ADD_FAILURE() << name;
    return PublishedResultsRow{};
  };
  const auto hunt = find("scavenger_hunt");
  EXPECT_EQ(hunt.end_to_end, 0.460);
  EXPECT_EQ(hunt.milestone_mean, 0.392);
  EXPECT_EQ(hunt.milestone_q975, 0.477);
  EXPECT_EQ(hunt.expert_bon, 0.004);
  EXPECT_EQ(hunt.outcome_grading, 0.790);
  EXPECT_EQ(hunt.model, "gpt-4o");
  EXPECT_EQ(find("debugging_program").expert_bon, 0.050);
  EXPECT_EQ(find("debugging_program").end_to_end, 0.300);
  EXPECT_EQ(find("double_then_double").milestone_q975, 0.966);
  EXPECT_EQ(find("freon_volume").outcome_grading, 0.910);
  EXPECT_EQ(find("agent_script").milestone_mean, 0.001);
}

TEST(FixtureTest, EchoIsByteIdentical) {
  std::ostringstream out;
  write_published_table(out, parse_fixture(fixture_text()));
  EXPECT_EQ(out.str(), fixture_text());
}

TEST(FixtureTest, CalibrationReplayFindsMajorityMissed) {
  const auto cal = calibration_from_fixture(parse_fixture(fixture_text()));
  std::size_t outcome_above = 0, idealized_above = 0;
  for (const auto& r : cal.rows) {
    outcome_above += r.outcome_above_q975 == 1.0;
    idealized_above += r.idealized_coverage == 0.0;
    if (r.task_name == "scavenger_hunt") {
      EXPECT_EQ(r.milestone_mean, 0.392);
      EXPECT_LT(r.milestone_mean, r.outcome_truth);
      EXPECT_EQ(r.outcome_truth, 0.790);
    }
  }
  EXPECT_EQ(outcome_above, 7u);
  EXPECT_EQ(idealized_above, 1u);
}

TEST(FixtureTest, BonReplayUnderestimatesEverywhere) {
  const auto bias = bon_bias_from_fixture(parse_fixture(fixture_text()));
  for (const auto& r : bias.rows) {
    EXPECT_TRUE(r.underestimates) << r.task_name;
    if (r.task_name == "debugging_program") {
      EXPECT_EQ(r.truth, 0.300);
      EXPECT_EQ(*r.expert_bon_mean, 0.050);
    }
  }
}

TEST(FixtureTest, RejectsMutants) {
  const std::string text = fixture_text();
  // Probability out of range.
  EXPECT_THROW(parse_fixture(replace_once(text, "0.460,0.392", "1.460,0.392")), ParseError);
  EXPECT_THROW(parse_fixture(replace_once(text, "0.050,0.400", "-0.050,0.400")), ParseError);
  // Mean above the upper quantile.
  EXPECT_THROW(parse_fixture(replace_once(text, "0.392,0.477", "0.492,0.477")), ParseError);
  // Non-numeric and missing values.
  EXPECT_THROW(parse_fixture(replace_once(text, "0.790,gpt-4o", "high,gpt-4o")), ParseError);
  EXPECT_THROW(parse_fixture(replace_once(text, "0.910,gpt-4o", "0.910")), ParseError);
  // Missing or renamed column.
  EXPECT_THROW(parse_fixture(replace_once(text, ",expert_bon", "")), ParseError);
  EXPECT_THROW(parse_fixture(replace_once(text, "outcome_grading", "outcome")), ParseError);
  EXPECT_THROW(ingest_published_table(kData / "missing.csv"), ParseError);
}

TEST(FixtureTest, MutantErrorNamesRowAndColumn) {
  try {
    parse_fixture(replace_once(fixture_text(), "0.580,0.556", "0.580,7.556"));
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 9"), std::string::npos) << msg;
    EXPECT_NE(msg.find("milestone_mean"), std::string::npos) << msg;
  }
}

}  // namespace
}  // namespace solverate
