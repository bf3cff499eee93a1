#pragma once

// CSV and JSON serialization for every emitted table, the matching CSV
// readers, and the published-results fixture loader.
//
// Numbers are written with six decimals; absent values are empty fields
// (CSV) or null (JSON).

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "solverate/estimators.hpp"
#include "solverate/harness.hpp"
#include "solverate/stats.hpp"

namespace solverate {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Low-level CSV helpers

inline std::string format_number(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

inline std::string format_optional(const std::optional<double>& x) {
  return x ? format_number(*x) : std::string();
}

inline std::string csv_field(std::string_view text) {
  if (text.find_first_of(",\"\r\n") != std::string_view::npos) {
    throw std::invalid_argument("value '" + std::string(text) + "' cannot be written as a CSV field");
  }
  return std::string(text);
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

struct CsvRows {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Reads a comma-separated table whose header must equal `expected`.
/// Row numbers in errors are 1-based data rows.
inline CsvRows read_csv(std::istream& in, const std::vector<std::string>& expected) {
  CsvRows table;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty CSV: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  table.header = split_csv_line(line);
  for (const auto& col : expected) {
    if (std::find(table.header.begin(), table.header.end(), col) == table.header.end()) {
      throw ParseError("header is missing column '" + col + "'");
    }
  }
  if (table.header != expected) {
    std::string want;
    for (const auto& c : expected) want += (want.empty() ? "" : ",") + c;
    throw ParseError("header must be exactly: " + want);
  }
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    auto fields = split_csv_line(line);
    if (fields.size() != expected.size()) {
      throw ParseError("row " + std::to_string(row) + ": expected " + std::to_string(expected.size()) +
                       " fields, got " + std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
  }
  return table;
}

namespace report_detail {

inline std::string where(std::size_t row, std::string_view column) {
  return "row " + std::to_string(row) + ", column '" + std::string(column) + "'";
}

inline double parse_double(std::string_view text, std::size_t row, std::string_view column) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw ParseError(where(row, column) + ": malformed number '" + std::string(text) + "'");
  }
  return v;
}

inline std::optional<double> parse_optional_double(std::string_view text, std::size_t row,
                                                   std::string_view column) {
  if (text.empty()) return std::nullopt;
  return parse_double(text, row, column);
}

inline double parse_probability(std::string_view text, std::size_t row, std::string_view column) {
  const double v = parse_double(text, row, column);
  if (!is_probability(v)) {
    throw ParseError(where(row, column) + ": value " + std::string(text) + " outside [0,1]");
  }
  return v;
}

inline std::uint64_t parse_uint(std::string_view text, std::size_t row, std::string_view column) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw ParseError(where(row, column) + ": malformed integer '" + std::string(text) + "'");
  }
  return v;
}

inline bool parse_bool(std::string_view text, std::size_t row, std::string_view column) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ParseError(where(row, column) + ": expected true or false, got '" + std::string(text) + "'");
}

inline std::string join_counts(const std::vector<std::size_t>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? ";" : "") + std::to_string(xs[i]);
  return out;
}

inline std::vector<std::size_t> parse_counts(std::string_view text, std::size_t row, std::string_view column) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  for (;;) {
    const auto sep = text.find(';', start);
    out.push_back(parse_uint(text.substr(start, sep - start), row, column));
    if (sep == std::string_view::npos) break;
    start = sep + 1;
  }
  return out;
}

inline const char* bool_text(bool b) { return b ? "true" : "false"; }

inline nlohmann::json optional_json(const std::optional<double>& x) {
  return x ? nlohmann::json(*x) : nlohmann::json(nullptr);
}

}  // namespace report_detail

// ---------------------------------------------------------------------------
// EstimateReport

inline const std::vector<std::string>& estimate_csv_header() {
  static const std::vector<std::string> h{"name", "method", "point", "ci_low", "ci_high",
                                          "samples", "seed", "excluded"};
  return h;
}

inline void write_csv_header(std::ostream& out, const std::vector<std::string>& header) {
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
}

inline void write_estimate_row(std::ostream& out, const EstimateReport& r) {
  out << csv_field(r.task_name) << ',' << to_string(r.method) << ',' << format_optional(r.point_estimate)
      << ',' << (r.interval ? format_number(r.interval->low) : "") << ','
      << (r.interval ? format_number(r.interval->high) : "") << ','
      << report_detail::join_counts(r.samples_used) << ',' << r.master_seed << ',' << r.excluded_rollouts
      << '\n';
}

inline void write_estimates_csv(std::ostream& out, const std::vector<EstimateReport>& reports) {
  write_csv_header(out, estimate_csv_header());
  for (const auto& r : reports) write_estimate_row(out, r);
}

/// Reads back the fields that the CSV carries; milestone stage counts and
/// the absence reason are not part of the row.
inline std::vector<EstimateReport> read_estimates_csv(std::istream& in) {
  using namespace report_detail;
  const auto table = read_csv(in, estimate_csv_header());
  std::vector<EstimateReport> out;
  std::size_t row = 0;
  for (const auto& f : table.rows) {
    ++row;
    EstimateReport r;
    r.task_name = f[0];
    try {
      r.method = parse_method(f[1]);
    } catch (const SpecError&) {
      throw ParseError(where(row, "method") + ": unknown method '" + f[1] + "'");
    }
    r.point_estimate = parse_optional_double(f[2], row, "point");
    const auto lo = parse_optional_double(f[3], row, "ci_low");
    const auto hi = parse_optional_double(f[4], row, "ci_high");
    if (lo.has_value() != hi.has_value()) throw ParseError(where(row, "ci_high") + ": half an interval");
    if (lo) r.interval = Interval{*lo, *hi};
    r.samples_used = parse_counts(f[5], row, "samples");
    r.master_seed = parse_uint(f[6], row, "seed");
    r.excluded_rollouts = parse_uint(f[7], row, "excluded");
    out.push_back(std::move(r));
  }
  return out;
}

inline nlohmann::json to_json(const EstimateReport& r) {
  using report_detail::optional_json;
  nlohmann::json j;
  j["name"] = r.task_name;
  j["method"] = std::string(to_string(r.method));
  j["point_estimate"] = optional_json(r.point_estimate);
  j["ci_low"] = r.interval ? nlohmann::json(r.interval->low) : nlohmann::json(nullptr);
  j["ci_high"] = r.interval ? nlohmann::json(r.interval->high) : nlohmann::json(nullptr);
  j["samples"] = r.samples_used;
  j["seed"] = r.master_seed;
  j["excluded"] = r.excluded_rollouts;
  if (!r.point_estimate) j["absent_reason"] = r.absent_reason;
  if (r.method == Method::milestone) {
    j["stage_successes"] = r.stage_successes;
    j["truncated"] = r.truncated;
  }
  return j;
}

// ---------------------------------------------------------------------------
// ReplicationSummary

inline const std::vector<std::string>& summary_csv_header() {
  static const std::vector<std::string> h{"name", "method", "regime", "replications", "mean",
                                          "variance", "truth", "bias", "coverage", "failed"};
  return h;
}

inline void write_summaries_csv(std::ostream& out, const std::vector<ReplicationSummary>& rows) {
  write_csv_header(out, summary_csv_header());
  for (const auto& s : rows) {
    out << csv_field(s.task_name) << ',' << to_string(s.method) << ','
        << (s.regime ? std::string(to_string(*s.regime)) : "") << ',' << s.replications << ','
        << format_optional(s.mean_estimate) << ',' << format_optional(s.empirical_variance) << ','
        << format_number(s.oracle_truth) << ',' << format_optional(s.bias) << ','
        << format_optional(s.coverage) << ',' << s.failed_replications << '\n';
  }
}

inline std::vector<ReplicationSummary> read_summaries_csv(std::istream& in) {
  using namespace report_detail;
  const auto table = read_csv(in, summary_csv_header());
  std::vector<ReplicationSummary> out;
  std::size_t row = 0;
  for (const auto& f : table.rows) {
    ++row;
    ReplicationSummary s;
    s.task_name = f[0];
    try {
      s.method = parse_method(f[1]);
      if (!f[2].empty()) s.regime = parse_regime(f[2]);
    } catch (const SpecError& e) {
      throw ParseError(where(row, "method/regime") + ": " + e.what());
    }
    s.replications = parse_uint(f[3], row, "replications");
    s.mean_estimate = parse_optional_double(f[4], row, "mean");
    s.empirical_variance = parse_optional_double(f[5], row, "variance");
    s.oracle_truth = parse_probability(f[6], row, "truth");
    s.bias = parse_optional_double(f[7], row, "bias");
    s.coverage = parse_optional_double(f[8], row, "coverage");
    s.failed_replications = parse_uint(f[9], row, "failed");
    out.push_back(std::move(s));
  }
  return out;
}

inline nlohmann::json to_json(const ReplicationSummary& s) {
  using report_detail::optional_json;
  return {{"name", s.task_name},
          {"method", std::string(to_string(s.method))},
          {"regime", s.regime ? nlohmann::json(std::string(to_string(*s.regime))) : nlohmann::json(nullptr)},
          {"replications", s.replications},
          {"mean_estimate", optional_json(s.mean_estimate)},
          {"empirical_variance", optional_json(s.empirical_variance)},
          {"oracle_truth", s.oracle_truth},
          {"bias", optional_json(s.bias)},
          {"coverage", optional_json(s.coverage)},
          {"failed_replications", s.failed_replications}};
}

// ---------------------------------------------------------------------------
// CalibrationTable

inline const std::vector<std::string>& calibration_csv_header() {
  static const std::vector<std::string> h{
      "name",          "source",          "replications",       "idealized_truth",
      "outcome_truth", "milestone_mean",  "milestone_q025",     "milestone_q975",
      "idealized_coverage", "outcome_coverage", "outcome_above_q975"};
  return h;
}

inline void write_calibration_csv(std::ostream& out, const CalibrationTable& t) {
  write_csv_header(out, calibration_csv_header());
  for (const auto& r : t.rows) {
    out << csv_field(r.task_name) << ',' << csv_field(r.source) << ',' << r.replications << ','
        << format_number(r.idealized_truth) << ',' << format_number(r.outcome_truth) << ','
        << format_number(r.milestone_mean) << ',' << format_optional(r.milestone_q025) << ','
        << format_number(r.milestone_q975) << ',' << format_number(r.idealized_coverage) << ','
        << format_number(r.outcome_coverage) << ',' << format_number(r.outcome_above_q975) << '\n';
  }
}

inline CalibrationTable read_calibration_csv(std::istream& in) {
  using namespace report_detail;
  const auto table = read_csv(in, calibration_csv_header());
  CalibrationTable out;
  std::size_t row = 0;
  for (const auto& f : table.rows) {
    ++row;
    CalibrationRow r;
    r.task_name = f[0];
    r.source = f[1];
    r.replications = parse_uint(f[2], row, "replications");
    r.idealized_truth = parse_probability(f[3], row, "idealized_truth");
    r.outcome_truth = parse_probability(f[4], row, "outcome_truth");
    r.milestone_mean = parse_probability(f[5], row, "milestone_mean");
    r.milestone_q025 = parse_optional_double(f[6], row, "milestone_q025");
    r.milestone_q975 = parse_probability(f[7], row, "milestone_q975");
    r.idealized_coverage = parse_probability(f[8], row, "idealized_coverage");
    r.outcome_coverage = parse_probability(f[9], row, "outcome_coverage");
    r.outcome_above_q975 = parse_probability(f[10], row, "outcome_above_q975");
    out.rows.push_back(std::move(r));
  }
  return out;
}

inline nlohmann::json to_json(const CalibrationRow& r) {
  using report_detail::optional_json;
  return {{"name", r.task_name},
          {"source", r.source},
          {"replications", r.replications},
          {"idealized_truth", r.idealized_truth},
          {"outcome_truth", r.outcome_truth},
          {"milestone_mean", r.milestone_mean},
          {"milestone_q025", optional_json(r.milestone_q025)},
          {"milestone_q975", r.milestone_q975},
          {"idealized_coverage", r.idealized_coverage},
          {"outcome_coverage", r.outcome_coverage},
          {"outcome_above_q975", r.outcome_above_q975}};
}

// ---------------------------------------------------------------------------
// BonBiasTable

inline const std::vector<std::string>& bon_bias_csv_header() {
  static const std::vector<std::string> h{"name",         "source",   "truth",  "expert_bon_mean",
                                          "expert_bon_expected", "corrected_is_mean", "failed",
                                          "underestimates"};
  return h;
}

inline void write_bon_bias_csv(std::ostream& out, const BonBiasTable& t) {
  write_csv_header(out, bon_bias_csv_header());
  for (const auto& r : t.rows) {
    out << csv_field(r.task_name) << ',' << csv_field(r.source) << ',' << format_number(r.truth) << ','
        << format_optional(r.expert_bon_mean) << ',' << format_optional(r.expert_bon_expected) << ','
        << format_optional(r.corrected_is_mean) << ',' << r.failed_replications << ','
        << report_detail::bool_text(r.underestimates) << '\n';
  }
}

inline BonBiasTable read_bon_bias_csv(std::istream& in) {
  using namespace report_detail;
  const auto table = read_csv(in, bon_bias_csv_header());
  BonBiasTable out;
  std::size_t row = 0;
  for (const auto& f : table.rows) {
    ++row;
    BonBiasRow r;
    r.task_name = f[0];
    r.source = f[1];
    r.truth = parse_probability(f[2], row, "truth");
    r.expert_bon_mean = parse_optional_double(f[3], row, "expert_bon_mean");
    r.expert_bon_expected = parse_optional_double(f[4], row, "expert_bon_expected");
    r.corrected_is_mean = parse_optional_double(f[5], row, "corrected_is_mean");
    r.failed_replications = parse_uint(f[6], row, "failed");
    r.underestimates = parse_bool(f[7], row, "underestimates");
    out.rows.push_back(std::move(r));
  }
  return out;
}

inline nlohmann::json to_json(const BonBiasRow& r) {
  using report_detail::optional_json;
  return {{"name", r.task_name},
          {"source", r.source},
          {"truth", r.truth},
          {"expert_bon_mean", optional_json(r.expert_bon_mean)},
          {"expert_bon_expected", optional_json(r.expert_bon_expected)},
          {"corrected_is_mean", optional_json(r.corrected_is_mean)},
          {"failed_replications", r.failed_replications},
          {"underestimates", r.underestimates}};
}

// ---------------------------------------------------------------------------
// TrivialStepReport

inline const std::vector<std::string>& trivial_step_csv_header() {
  static const std::vector<std::string> h{
      "name",      "extra_steps", "rollouts",      "seed",          "base_truth",   "extended_truth",
      "base_bits", "extended_bits", "base_bon_mean", "extended_bon_mean", "failed", "max_bits_shift_error",
      "exact_shift"};
  return h;
}

inline void write_trivial_step_csv(std::ostream& out, const std::vector<TrivialStepReport>& reps) {
  write_csv_header(out, trivial_step_csv_header());
  for (const auto& r : reps) {
    out << csv_field(r.task_name) << ',' << r.extra_steps << ',' << r.rollouts << ',' << r.seed << ','
        << format_number(r.base_truth) << ',' << format_number(r.extended_truth) << ','
        << format_optional(r.base_mean_bits) << ',' << format_optional(r.extended_mean_bits) << ','
        << format_optional(r.base_bon_mean) << ',' << format_optional(r.extended_bon_mean) << ','
        << r.failed_rollouts << ',' << format_number(r.max_bits_shift_error) << ','
        << report_detail::bool_text(r.every_rollout_shifted_exactly) << '\n';
  }
}

inline std::vector<TrivialStepReport> read_trivial_step_csv(std::istream& in) {
  using namespace report_detail;
  const auto table = read_csv(in, trivial_step_csv_header());
  std::vector<TrivialStepReport> out;
  std::size_t row = 0;
  for (const auto& f : table.rows) {
    ++row;
    TrivialStepReport r;
    r.task_name = f[0];
    r.extra_steps = parse_uint(f[1], row, "extra_steps");
    r.rollouts = parse_uint(f[2], row, "rollouts");
    r.seed = parse_uint(f[3], row, "seed");
    r.base_truth = parse_probability(f[4], row, "base_truth");
    r.extended_truth = parse_probability(f[5], row, "extended_truth");
    r.base_mean_bits = parse_optional_double(f[6], row, "base_bits");
    r.extended_mean_bits = parse_optional_double(f[7], row, "extended_bits");
    r.base_bon_mean = parse_optional_double(f[8], row, "base_bon_mean");
    r.extended_bon_mean = parse_optional_double(f[9], row, "extended_bon_mean");
    r.failed_rollouts = parse_uint(f[10], row, "failed");
    r.max_bits_shift_error = parse_double(f[11], row, "max_bits_shift_error");
    r.every_rollout_shifted_exactly = parse_bool(f[12], row, "exact_shift");
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// VarianceBreakdown

struct VarianceRow {
  std::string name;
  double v_end_to_end = 0.0;
  double v_milestone = 0.0;
  bool holds = true;
};

inline const std::vector<std::string>& variance_csv_header() {
  static const std::vector<std::string> h{"name", "v_end_to_end", "v_milestone", "holds"};
  return h;
}

/// Two rows: `<task>` with the closed forms and `<task>:empirical` with the
/// replicated sample variances.
inline std::vector<VarianceRow> variance_rows(const VarianceComparison& c) {
  return {{c.task_name, c.formula.end_to_end_variance, c.formula.milestone_variance, c.formula.inequality_holds},
          {c.task_name + ":empirical", c.empirical.end_to_end_variance, c.empirical.milestone_variance,
           c.empirical.inequality_holds}};
}

inline void write_variance_csv(std::ostream& out, const std::vector<VarianceRow>& rows) {
  write_csv_header(out, variance_csv_header());
  for (const auto& r : rows) {
    out << csv_field(r.name) << ',' << format_number(r.v_end_to_end) << ',' << format_number(r.v_milestone)
        << ',' << report_detail::bool_text(r.holds) << '\n';
  }
}

inline std::vector<VarianceRow> read_variance_csv(std::istream& in) {
  using namespace report_detail;
  const auto table = read_csv(in, variance_csv_header());
  std::vector<VarianceRow> out;
  std::size_t row = 0;
  for (const auto& f : table.rows) {
    ++row;
    out.push_back({f[0], parse_double(f[1], row, "v_end_to_end"), parse_double(f[2], row, "v_milestone"),
                   parse_bool(f[3], row, "holds")});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Published results fixture

/// One published task row: end-to-end rate under idealized grading,
/// milestone mean and 97.5% quantile, expert best-of-N estimate and
/// end-to-end rate under outcome-based grading.
struct PublishedResultsRow {
  std::string task;
  double end_to_end = 0.0;
  double milestone_mean = 0.0;
  double milestone_q975 = 0.0;
  double expert_bon = 0.0;
  double outcome_grading = 0.0;
  std::string model;
};

inline const std::vector<std::string>& published_table_header() {
  static const std::vector<std::string> h{"task",       "end_to_end",      "milestone_mean", "milestone_q975",
                                          "expert_bon", "outcome_grading", "model"};
  return h;
}

inline std::vector<PublishedResultsRow> read_published_table(std::istream& in) {
  using namespace report_detail;
  const auto table = read_csv(in, published_table_header());
  std::vector<PublishedResultsRow> out;
  std::size_t row = 0;
  for (const auto& f : table.rows) {
    ++row;
    PublishedResultsRow r;
    r.task = f[0];
    if (r.task.empty()) throw ParseError(where(row, "task") + ": empty task name");
    r.end_to_end = parse_probability(f[1], row, "end_to_end");
    r.milestone_mean = parse_probability(f[2], row, "milestone_mean");
    r.milestone_q975 = parse_probability(f[3], row, "milestone_q975");
    r.expert_bon = parse_probability(f[4], row, "expert_bon");
    r.outcome_grading = parse_probability(f[5], row, "outcome_grading");
    r.model = f[6];
    if (r.milestone_mean > r.milestone_q975) {
      throw ParseError(where(row, "milestone_q975") + ": milestone_mean exceeds the 97.5% quantile");
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<PublishedResultsRow> ingest_published_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot read '" + path.string() + "'");
  try {
    return read_published_table(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// Published values are stored with three decimals, so they are echoed
/// with three as well.
inline void write_published_table(std::ostream& out, const std::vector<PublishedResultsRow>& rows) {
  write_csv_header(out, published_table_header());
  char buf[64];
  for (const auto& r : rows) {
    out << csv_field(r.task);
    for (double v : {r.end_to_end, r.milestone_mean, r.milestone_q975, r.expert_bon, r.outcome_grading}) {
      std::snprintf(buf, sizeof buf, "%.3f", v);
      out << ',' << buf;
    }
    out << ',' << csv_field(r.model) << '\n';
  }
}

/// Published rows as calibration rows: the idealized column is the
/// idealized-graded end-to-end rate. Only the upper quantile is published,
/// so coverage fractions are 0/1 one-sided checks against it.
inline CalibrationTable calibration_from_fixture(const std::vector<PublishedResultsRow>& rows) {
  CalibrationTable t;
  for (const auto& p : rows) {
    CalibrationRow r;
    r.task_name = p.task;
    r.source = "fixture";
    r.replications = 1;
    r.idealized_truth = p.end_to_end;
    r.outcome_truth = p.outcome_grading;
    r.milestone_mean = p.milestone_mean;
    r.milestone_q975 = p.milestone_q975;
    r.idealized_coverage = p.end_to_end <= p.milestone_q975 ? 1.0 : 0.0;
    r.outcome_coverage = p.outcome_grading <= p.milestone_q975 ? 1.0 : 0.0;
    r.outcome_above_q975 = p.outcome_grading > p.milestone_q975 ? 1.0 : 0.0;
    t.rows.push_back(std::move(r));
  }
  return t;
}

/// Published rows as best-of-N rows, with the end-to-end column as truth.
inline BonBiasTable bon_bias_from_fixture(const std::vector<PublishedResultsRow>& rows) {
  BonBiasTable t;
  for (const auto& p : rows) {
    BonBiasRow r;
    r.task_name = p.task;
    r.source = "fixture";
    r.truth = p.end_to_end;
    r.expert_bon_mean = p.expert_bon;
    r.underestimates = p.expert_bon < p.end_to_end;
    t.rows.push_back(std::move(r));
  }
  return t;
}

}  // namespace solverate
