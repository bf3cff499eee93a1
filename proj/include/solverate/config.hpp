#pragma once

// Task and suite configuration files. Both are JSON objects; unknown keys
// are rejected so typos cannot silently fall back to defaults.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "solverate/estimators.hpp"
#include "solverate/harness.hpp"
#include "solverate/task_model.hpp"

namespace solverate {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace config_detail {

using nlohmann::json;

inline void check_keys(const json& j, std::initializer_list<const char*> required,
                       std::initializer_list<const char*> optional, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> known;
  for (const char* k : required) {
    known.insert(k);
    if (!j.contains(k)) throw ConfigError(where + ": missing required key '" + k + "'");
  }
  for (const char* k : optional) known.insert(k);
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

inline std::size_t positive_int(const json& j, const char* key, const std::string& where) {
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() <= 0) {
    throw ConfigError(where + ": '" + key + "' must be a positive integer");
  }
  return static_cast<std::size_t>(v.get<std::int64_t>());
}

inline std::vector<double> number_list(const json& v, const std::string& what) {
  if (!v.is_array()) throw ConfigError(what + " must be an array of numbers");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) throw ConfigError(what + " must be an array of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

inline std::vector<std::string> string_list(const json& v, const std::string& what) {
  if (!v.is_array()) throw ConfigError(what + " must be an array of strings");
  std::vector<std::string> out;
  for (const auto& x : v) {
    if (!x.is_string()) throw ConfigError(what + " must be an array of strings");
    out.push_back(x.get<std::string>());
  }
  return out;
}

inline std::string string_field(const json& j, const char* key, const std::string& where) {
  if (!j.at(key).is_string()) throw ConfigError(where + ": '" + key + "' must be a string");
  return j.at(key).get<std::string>();
}

}  // namespace config_detail

/// Builds a task from its config object. Schemas:
///   chain: kind, name, milestone_probs, message_budget
///   graph: kind, name, milestones [{id, prob}], canonical_order,
///          order_policy ("uniform" | [{order, weight}]), message_budget
///   bon:   kind, name, steps, completions_per_step,
///          agent_rank_dist ("uniform" | [weights]), optional message_budget
inline TaskSpec task_from_json(const nlohmann::json& j) {
  using namespace config_detail;
  if (!j.is_object() || !j.contains("kind") || !j.at("kind").is_string()) {
    throw ConfigError("task: missing string key 'kind'");
  }
  const std::string kind = j.at("kind").get<std::string>();
  const std::string where = "task '" + (j.contains("name") && j["name"].is_string()
                                            ? j["name"].get<std::string>()
                                            : std::string("?")) + "'";
  try {
    if (kind == "chain") {
      check_keys(j, {"kind", "name", "milestone_probs", "message_budget"}, {}, where);
      return ChainTaskSpec(string_field(j, "name", where),
                           number_list(j.at("milestone_probs"), "milestone_probs"),
                           positive_int(j, "message_budget", where));
    }
    if (kind == "graph") {
      check_keys(j, {"kind", "name", "milestones", "canonical_order", "order_policy", "message_budget"}, {},
                 where);
      const json& ms = j.at("milestones");
      if (!ms.is_array()) throw ConfigError(where + ": 'milestones' must be an array");
      std::vector<Milestone> milestones;
      for (const auto& m : ms) {
        check_keys(m, {"id", "prob"}, {}, where + " milestone");
        if (!m.at("id").is_string() || !m.at("prob").is_number()) {
          throw ConfigError(where + ": milestone needs string id and numeric prob");
        }
        milestones.push_back({m.at("id").get<std::string>(), m.at("prob").get<double>()});
      }
      const auto canonical = string_list(j.at("canonical_order"), "canonical_order");
      const json& pol = j.at("order_policy");
      std::vector<std::pair<std::vector<std::string>, double>> policy;
      if (pol.is_string()) {
        if (pol.get<std::string>() != "uniform") {
          throw ConfigError(where + ": order_policy must be \"uniform\" or a list");
        }
        std::vector<std::string> ids;
        for (const auto& m : milestones) ids.push_back(m.id);
        policy = GraphTaskSpec::uniform_policy(ids);
      } else if (pol.is_array()) {
        for (const auto& entry : pol) {
          check_keys(entry, {"order", "weight"}, {}, where + " order_policy entry");
          if (!entry.at("weight").is_number()) throw ConfigError(where + ": weight must be a number");
          policy.emplace_back(string_list(entry.at("order"), "order"), entry.at("weight").get<double>());
        }
      } else {
        throw ConfigError(where + ": order_policy must be \"uniform\" or a list");
      }
      return GraphTaskSpec(string_field(j, "name", where), std::move(milestones), canonical, policy,
                           positive_int(j, "message_budget", where));
    }
    if (kind == "bon") {
      check_keys(j, {"kind", "name", "steps", "completions_per_step", "agent_rank_dist"},
                 {"message_budget"}, where);
      auto steps = number_list(j.at("steps"), "steps");
      const std::size_t completions = positive_int(j, "completions_per_step", where);
      if (j.contains("message_budget") && positive_int(j, "message_budget", where) < steps.size()) {
        throw ConfigError(where + ": message_budget is smaller than the number of steps");
      }
      const json& dist = j.at("agent_rank_dist");
      std::vector<double> rank_dist;
      if (dist.is_string() && dist.get<std::string>() == "uniform") {
        rank_dist = BoNTaskSpec::uniform_rank_dist(completions);
      } else {
        rank_dist = number_list(dist, "agent_rank_dist");
      }
      return BoNTaskSpec(string_field(j, "name", where), std::move(steps), completions, std::move(rank_dist));
    }
  } catch (const SpecError& e) {
    throw ConfigError(where + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
  throw ConfigError(where + ": unknown kind '" + kind + "' (expected chain, graph or bon)");
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

inline TaskSpec load_task(const std::filesystem::path& path) { return task_from_json(read_json_file(path)); }

/// Suite schema: tasks (inline task objects or paths relative to the suite
/// file), and optional n_end_to_end, n_per_milestone, bon_rollouts,
/// replications, regimes, methods. The master seed always comes from the
/// command line.
inline SuiteConfig suite_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  using namespace config_detail;
  const std::string where = "suite";
  check_keys(j, {"tasks"},
             {"n_end_to_end", "n_per_milestone", "bon_rollouts", "replications", "regimes", "methods"}, where);
  SuiteConfig suite;
  if (!j.at("tasks").is_array()) throw ConfigError("suite: 'tasks' must be an array");
  for (const auto& t : j.at("tasks")) {
    if (t.is_string()) {
      suite.tasks.push_back(load_task(base_dir / t.get<std::string>()));
    } else {
      suite.tasks.push_back(task_from_json(t));
    }
  }
  if (j.contains("n_end_to_end")) suite.budgets.n_end_to_end = positive_int(j, "n_end_to_end", where);
  if (j.contains("n_per_milestone")) suite.budgets.n_per_milestone = positive_int(j, "n_per_milestone", where);
  if (j.contains("bon_rollouts")) suite.budgets.bon_rollouts = positive_int(j, "bon_rollouts", where);
  if (j.contains("replications")) suite.replications = positive_int(j, "replications", where);
  try {
    if (j.contains("regimes")) {
      suite.regimes.clear();
      for (const auto& r : string_list(j.at("regimes"), "regimes")) suite.regimes.push_back(parse_regime(r));
    }
    if (j.contains("methods")) {
      suite.methods.clear();
      for (const auto& m : string_list(j.at("methods"), "methods")) suite.methods.push_back(parse_method(m));
    }
  } catch (const SpecError& e) {
    throw ConfigError(std::string("suite: ") + e.what());
  }
  return suite;
}

inline SuiteConfig load_suite(const std::filesystem::path& path) {
  return suite_from_json(read_json_file(path), path.parent_path());
}

}  // namespace solverate
