#pragma once

// Command-line front end. `run` is callable in-process; tools/solverate.cpp
// only forwards main's arguments to it.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "solverate/config.hpp"
#include "solverate/estimators.hpp"
#include "solverate/harness.hpp"
#include "solverate/report.hpp"
#include "solverate/task_model.hpp"

namespace solverate::cli {

namespace detail {

inline void emit(const std::string& path, std::ostream& fallback,
                 const std::function<void(std::ostream&)>& write) {
  if (path.empty()) {
    write(fallback);
    return;
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw std::runtime_error("cannot write '" + path + "'");
  write(file);
  if (!file) throw std::runtime_error("failed writing '" + path + "'");
}

inline void emit_json(const std::string& path, const nlohmann::json& doc) {
  if (path.empty()) return;
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw std::runtime_error("cannot write '" + path + "'");
  file << doc.dump(2) << '\n';
}

inline std::vector<double> parse_prob_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw SpecError("malformed probability '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw SpecError("--probs needs at least one value");
  return out;
}

struct SuiteFlags {
  std::string suite_path;
  std::uint64_t seed = 0;
  std::size_t replications = 0;
  unsigned workers = 0;
  std::string out_path;
  std::string json_path;
};

inline void add_suite_flags(CLI::App* cmd, SuiteFlags& f) {
  cmd->add_option("--suite", f.suite_path, "Suite config (JSON); defaults to the built-in ten-task suite")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "Master seed")->required();
  cmd->add_option("--r,--replications", f.replications, "Override the suite's replication count")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--workers", f.workers, "Worker threads (0 = all cores); output does not depend on it");
  cmd->add_option("--out", f.out_path, "CSV output path (default: stdout)");
  cmd->add_option("--json", f.json_path, "JSON summary output path");
}

inline SuiteConfig make_suite(const SuiteFlags& f) {
  SuiteConfig suite;
  if (f.suite_path.empty()) {
    suite.tasks = default_tasks();
  } else {
    suite = load_suite(f.suite_path);
  }
  if (f.replications > 0) suite.replications = f.replications;
  suite.master_seed = f.seed;
  suite.workers = f.workers;
  return suite;
}

}  // namespace detail

/// Parses `args` (without the program name) and runs one subcommand.
/// Returns 0 on success; nonzero with a diagnostic on `err` otherwise.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Solve-rate estimator replication toolkit", "solverate"};
  app.require_subcommand(1, 1);

  // estimate
  std::string task_path, method_name, regime_name = "outcome_based", out_path, json_path;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  unsigned workers = 0;
  auto* estimate_cmd = app.add_subcommand("estimate", "Run one estimator on one task");
  estimate_cmd->add_option("--task", task_path, "Task config (JSON)")->required()->check(CLI::ExistingFile);
  estimate_cmd->add_option("--method", method_name, "end_to_end | milestone | expert_bon | corrected_is")
      ->required();
  estimate_cmd->add_option("--n", n, "Samples (N, N per milestone, or rollouts)")
      ->required()
      ->check(CLI::PositiveNumber);
  estimate_cmd->add_option("--seed", seed, "Master seed")->required();
  estimate_cmd->add_option("--regime", regime_name, "idealized | outcome_based (end_to_end only)");
  estimate_cmd->add_option("--workers", workers, "Worker threads (0 = all cores)");
  estimate_cmd->add_option("--out", out_path, "CSV output path (default: stdout)");
  estimate_cmd->add_option("--json", json_path, "JSON record output path");

  detail::SuiteFlags replicate_flags, calibrate_flags, bias_flags;
  auto* replicate_cmd = app.add_subcommand("replicate", "Bias/variance/coverage over a suite");
  detail::add_suite_flags(replicate_cmd, replicate_flags);

  std::string calibrate_fixture;
  auto* calibrate_cmd = app.add_subcommand("calibrate", "Milestone estimates against both grading regimes");
  detail::add_suite_flags(calibrate_cmd, calibrate_flags);
  calibrate_cmd->add_option("--fixture", calibrate_fixture, "Also replay published rows from this CSV")
      ->check(CLI::ExistingFile);

  std::string bias_fixture;
  auto* bias_cmd = app.add_subcommand("bon-bias", "Expert best-of-N against corrected importance sampling");
  detail::add_suite_flags(bias_cmd, bias_flags);
  bias_cmd->add_option("--fixture", bias_fixture, "Also replay published rows from this CSV")
      ->check(CLI::ExistingFile);

  std::string trivial_task;
  std::vector<std::size_t> extra_steps;
  std::size_t trivial_rollouts = 0;
  std::uint64_t trivial_seed = 0;
  std::string trivial_out;
  auto* trivial_cmd = app.add_subcommand("trivial-step", "Append q=1 steps to a best-of-N task");
  trivial_cmd->add_option("--task", trivial_task, "Best-of-N task config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  trivial_cmd->add_option("--extra", extra_steps, "Trivial steps to add (comma list allowed)")
      ->required()
      ->delimiter(',');
  trivial_cmd->add_option("--rollouts", trivial_rollouts, "Rollouts per task")
      ->required()
      ->check(CLI::PositiveNumber);
  trivial_cmd->add_option("--seed", trivial_seed, "Master seed")->required();
  trivial_cmd->add_option("--workers", workers, "Worker threads (0 = all cores)");
  trivial_cmd->add_option("--out", trivial_out, "CSV output path (default: stdout)");

  std::string probs_text, variance_name = "chain", variance_out;
  std::size_t variance_n = 0, variance_r = 0, variance_budget = 0;
  std::uint64_t variance_seed = 0;
  auto* variance_cmd = app.add_subcommand("variance", "Closed-form and empirical estimator variances");
  variance_cmd->add_option("--probs", probs_text, "Comma-separated milestone probabilities")->required();
  variance_cmd->add_option("--n", variance_n, "Samples per estimator (per stage for milestone)")
      ->required()
      ->check(CLI::PositiveNumber);
  variance_cmd->add_option("--r", variance_r, "Replications")->required()->check(CLI::PositiveNumber);
  variance_cmd->add_option("--seed", variance_seed, "Master seed")->required();
  variance_cmd->add_option("--budget", variance_budget, "Message budget (default: number of milestones)");
  variance_cmd->add_option("--name", variance_name, "Task name for the output rows");
  variance_cmd->add_option("--workers", workers, "Worker threads (0 = all cores)");
  variance_cmd->add_option("--out", variance_out, "CSV output path (default: stdout)");

  std::string ingest_path, ingest_out;
  auto* ingest_cmd = app.add_subcommand("ingest", "Validate and echo a published-results CSV");
  ingest_cmd->add_option("--path", ingest_path, "Fixture CSV")->required();
  ingest_cmd->add_option("--out", ingest_out, "CSV output path (default: stdout)");

  std::vector<std::string> argv_storage{"solverate"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*estimate_cmd) {
      const TaskSpec task = load_task(task_path);
      EstimatorOptions opts;
      opts.workers = workers;
      const auto report = estimate(task, parse_method(method_name), parse_regime(regime_name), n, seed, opts);
      detail::emit(out_path, out, [&](std::ostream& os) { write_estimates_csv(os, {report}); });
      detail::emit_json(json_path, to_json(report));
    } else if (*replicate_cmd) {
      const auto suite = detail::make_suite(replicate_flags);
      const auto rows = run_replications(suite);
      detail::emit(replicate_flags.out_path, out, [&](std::ostream& os) { write_summaries_csv(os, rows); });
      nlohmann::json doc{{"command", "replicate"}, {"seed", suite.master_seed},
                         {"replications", suite.replications}, {"summaries", nlohmann::json::array()}};
      for (const auto& s : rows) doc["summaries"].push_back(to_json(s));
      detail::emit_json(replicate_flags.json_path, doc);
    } else if (*calibrate_cmd) {
      const auto suite = detail::make_suite(calibrate_flags);
      auto table = calibration_experiment(suite);
      if (!calibrate_fixture.empty()) {
        for (auto& row : calibration_from_fixture(ingest_published_table(calibrate_fixture)).rows) {
          table.rows.push_back(std::move(row));
        }
      }
      detail::emit(calibrate_flags.out_path, out, [&](std::ostream& os) { write_calibration_csv(os, table); });
      nlohmann::json doc{{"command", "calibrate"}, {"seed", suite.master_seed},
                         {"replications", suite.replications}, {"rows", nlohmann::json::array()}};
      for (const auto& r : table.rows) doc["rows"].push_back(to_json(r));
      detail::emit_json(calibrate_flags.json_path, doc);
    } else if (*bias_cmd) {
      const auto suite = detail::make_suite(bias_flags);
      auto table = bon_bias_experiment(suite);
      if (!bias_fixture.empty()) {
        for (auto& row : bon_bias_from_fixture(ingest_published_table(bias_fixture)).rows) {
          table.rows.push_back(std::move(row));
        }
      }
      detail::emit(bias_flags.out_path, out, [&](std::ostream& os) { write_bon_bias_csv(os, table); });
      nlohmann::json doc{{"command", "bon-bias"}, {"seed", suite.master_seed},
                         {"replications", suite.replications}, {"rows", nlohmann::json::array()}};
      for (const auto& r : table.rows) doc["rows"].push_back(to_json(r));
      detail::emit_json(bias_flags.json_path, doc);
    } else if (*trivial_cmd) {
      const TaskSpec task = load_task(trivial_task);
      const auto* bon = std::get_if<BoNTaskSpec>(&task);
      if (!bon) throw SpecError("trivial-step needs a best-of-N task (kind \"bon\")");
      std::vector<TrivialStepReport> reps;
      for (std::size_t k : extra_steps) {
        reps.push_back(trivial_step_experiment(*bon, k, trivial_rollouts, trivial_seed, workers));
      }
      detail::emit(trivial_out, out, [&](std::ostream& os) { write_trivial_step_csv(os, reps); });
    } else if (*variance_cmd) {
      const auto probs = detail::parse_prob_list(probs_text);
      const std::size_t budget = variance_budget > 0 ? variance_budget : probs.size();
      const ChainTaskSpec chain(variance_name, probs, budget);
      const auto cmp = variance_comparison_experiment(chain, variance_n, variance_r, variance_seed, workers);
      detail::emit(variance_out, out, [&](std::ostream& os) { write_variance_csv(os, variance_rows(cmp)); });
    } else if (*ingest_cmd) {
      const auto rows = ingest_published_table(ingest_path);
      detail::emit(ingest_out, out, [&](std::ostream& os) { write_published_table(os, rows); });
    }
  } catch (const std::exception& e) {
    err << "solverate: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace solverate::cli
