#pragma once

// Synthetic sequential-task models standing in for an agent, their rollout
// simulators, and the exact solve rates used as ground truth.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "solverate/numeric.hpp"
#include "solverate/rng.hpp"

namespace solverate {

/// Raised when a task specification violates its invariants.
class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when exact enumeration would exceed the permutation limit.
class EnumerationLimitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 10! permutations.
inline constexpr std::uint64_t kDefaultPermutationLimit = 3628800;

enum class GradingRegime { idealized, outcome_based };

inline std::string_view to_string(GradingRegime regime) noexcept {
  return regime == GradingRegime::idealized ? "idealized" : "outcome_based";
}

inline GradingRegime parse_regime(std::string_view text) {
  if (text == "idealized") return GradingRegime::idealized;
  if (text == "outcome_based" || text == "outcome") return GradingRegime::outcome_based;
  throw SpecError("unknown grading regime '" + std::string(text) + "'");
}

namespace detail {

inline std::uint64_t factorial_saturating(std::size_t n) {
  std::uint64_t acc = 1;
  for (std::size_t k = 2; k <= n; ++k) {
    if (acc > UINT64_MAX / k) return UINT64_MAX;
    acc *= k;
  }
  return acc;
}

inline void require_probability(double p, std::string_view what) {
  if (!is_probability(p)) {
    throw SpecError(std::string(what) + " must lie in [0,1], got " + std::to_string(p));
  }
}

}  // namespace detail

/// Strictly ordered milestones, each passed independently with its own
/// probability. One attempt costs one message.
class ChainTaskSpec {
 public:
  ChainTaskSpec(std::string name, std::vector<double> milestone_probs,
                std::size_t message_budget)
      : name_(std::move(name)),
        probs_(std::move(milestone_probs)),
        budget_(message_budget) {
    if (probs_.empty()) throw SpecError("chain task '" + name_ + "' needs at least one milestone");
    for (double p : probs_) detail::require_probability(p, "milestone probability");
    if (budget_ == 0) throw SpecError("message_budget must be positive");
  }

  const std::string& name() const noexcept { return name_; }
  std::span<const double> milestone_probs() const noexcept { return probs_; }
  std::size_t milestone_count() const noexcept { return probs_.size(); }
  std::size_t message_budget() const noexcept { return budget_; }

 private:
  std::string name_;
  std::vector<double> probs_;
  std::size_t budget_;
};

struct Milestone {
  std::string id;
  double success_prob = 0.0;
};

/// One admissible attempt order (indices into the milestone list) and its
/// probability under the agent's policy.
struct WeightedOrder {
  std::vector<std::size_t> order;
  double weight = 0.0;
};

/// Milestones that the agent may complete in any of several orders. The
/// milestone method only knows about canonical_order.
class GraphTaskSpec {
 public:
  GraphTaskSpec(std::string name, std::vector<Milestone> milestones,
                const std::vector<std::string>& canonical_order,
                const std::vector<std::pair<std::vector<std::string>, double>>& order_policy,
                std::size_t message_budget)
      : name_(std::move(name)), milestones_(std::move(milestones)), budget_(message_budget) {
    if (milestones_.empty()) throw SpecError("graph task '" + name_ + "' needs at least one milestone");
    for (std::size_t i = 0; i < milestones_.size(); ++i) {
      detail::require_probability(milestones_[i].success_prob, "milestone probability");
      for (std::size_t j = 0; j < i; ++j) {
        if (milestones_[j].id == milestones_[i].id) {
          throw SpecError("duplicate milestone id '" + milestones_[i].id + "'");
        }
      }
    }
    if (budget_ == 0) throw SpecError("message_budget must be positive");

    canonical_ = to_permutation(canonical_order, "canonical_order");
    double total = 0.0;
    for (const auto& [ids, weight] : order_policy) {
      if (!(weight >= 0.0)) throw SpecError("order_policy weights must be non-negative");
      if (weight == 0.0) continue;
      auto order = to_permutation(ids, "order_policy entry");
      for (const auto& existing : policy_) {
        if (existing.order == order) throw SpecError("order_policy lists a permutation twice");
      }
      policy_.push_back({std::move(order), weight});
      total += weight;
    }
    if (policy_.empty() || std::abs(total - 1.0) > 1e-12) {
      throw SpecError("order_policy weights must sum to 1 (got " + std::to_string(total) + ")");
    }
  }

  /// Every permutation of `ids` with equal weight. Rounding drift is folded
  /// into the last weight so the weights sum to exactly 1.
  static std::vector<std::pair<std::vector<std::string>, double>> uniform_policy(
      std::vector<std::string> ids, std::uint64_t permutation_limit = kDefaultPermutationLimit) {
    if (detail::factorial_saturating(ids.size()) > permutation_limit) {
      throw EnumerationLimitError("uniform order policy over " + std::to_string(ids.size()) +
                                  " milestones exceeds the permutation limit");
    }
    std::sort(ids.begin(), ids.end());
    std::vector<std::pair<std::vector<std::string>, double>> policy;
    do policy.emplace_back(ids, 0.0);
    while (std::next_permutation(ids.begin(), ids.end()));
    const double w = 1.0 / static_cast<double>(policy.size());
    double head = 0.0;
    for (std::size_t i = 0; i + 1 < policy.size(); ++i) {
      policy[i].second = w;
      head += w;
    }
    policy.back().second = 1.0 - head;
    return policy;
  }

  /// Uniform order policy; the canonical order is the listed milestone order.
  static GraphTaskSpec uniform(std::string name, std::vector<Milestone> milestones,
                               std::size_t message_budget,
                               std::uint64_t permutation_limit = kDefaultPermutationLimit) {
    std::vector<std::string> ids;
    for (const auto& m : milestones) ids.push_back(m.id);
    auto policy = uniform_policy(ids, permutation_limit);
    return GraphTaskSpec(std::move(name), std::move(milestones), ids, policy, message_budget);
  }

  const std::string& name() const noexcept { return name_; }
  std::span<const Milestone> milestones() const noexcept { return milestones_; }
  std::size_t milestone_count() const noexcept { return milestones_.size(); }
  std::span<const std::size_t> canonical_order() const noexcept { return canonical_; }
  std::span<const WeightedOrder> order_policy() const noexcept { return policy_; }
  std::size_t message_budget() const noexcept { return budget_; }

  std::size_t index_of(std::string_view id) const {
    for (std::size_t i = 0; i < milestones_.size(); ++i) {
      if (milestones_[i].id == id) return i;
    }
    throw SpecError("unknown milestone id '" + std::string(id) + "'");
  }

  /// Draws a full attempt order from the policy, restricted to orders that
  /// start with `prefix` and renormalized. Throws if no such order has weight.
  std::vector<std::size_t> sample_order(Rng& rng, std::span<const std::size_t> prefix = {}) const {
    double mass = 0.0;
    for (const auto& entry : policy_) {
      if (starts_with(entry.order, prefix)) mass += entry.weight;
    }
    if (mass <= 0.0) throw SpecError("attempt prefix has zero probability under order_policy");
    const double target = rng.uniform() * mass;
    double acc = 0.0;
    const WeightedOrder* last = nullptr;
    for (const auto& entry : policy_) {
      if (!starts_with(entry.order, prefix)) continue;
      last = &entry;
      acc += entry.weight;
      if (target < acc) return entry.order;
    }
    return last->order;
  }

 private:
  static bool starts_with(std::span<const std::size_t> order, std::span<const std::size_t> prefix) {
    return prefix.size() <= order.size() && std::equal(prefix.begin(), prefix.end(), order.begin());
  }

  std::vector<std::size_t> to_permutation(const std::vector<std::string>& ids,
                                          std::string_view what) const {
    if (ids.size() != milestones_.size()) {
      throw SpecError(std::string(what) + " is not a permutation of the milestones");
    }
    std::vector<std::size_t> order;
    std::vector<bool> seen(milestones_.size(), false);
    for (const auto& id : ids) {
      const std::size_t idx = index_of(id);
      if (seen[idx]) throw SpecError(std::string(what) + " repeats milestone '" + id + "'");
      seen[idx] = true;
      order.push_back(idx);
    }
    return order;
  }

  std::string name_;
  std::vector<Milestone> milestones_;
  std::vector<std::size_t> canonical_;
  std::vector<WeightedOrder> policy_;
  std::size_t budget_;
};

/// Ranked-completion model for expert best-of-N. Each of the N_c sampled
/// completions at a step is productive independently with that step's rate.
class BoNTaskSpec {
 public:
  BoNTaskSpec(std::string name, std::vector<double> step_probs, std::size_t completions_per_step,
              std::vector<double> agent_rank_dist)
      : name_(std::move(name)),
        steps_(std::move(step_probs)),
        completions_(completions_per_step),
        rank_dist_(std::move(agent_rank_dist)) {
    if (steps_.empty()) throw SpecError("best-of-N task '" + name_ + "' needs at least one step");
    for (double q : steps_) detail::require_probability(q, "step probability");
    if (completions_ == 0) throw SpecError("completions_per_step must be positive");
    if (rank_dist_.size() != completions_) {
      throw SpecError("agent_rank_dist must have one entry per completion");
    }
    double total = 0.0;
    for (double w : rank_dist_) {
      if (!(w >= 0.0)) throw SpecError("agent_rank_dist entries must be non-negative");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) throw SpecError("agent_rank_dist must sum to 1");
  }

  static std::vector<double> uniform_rank_dist(std::size_t completions) {
    return std::vector<double>(completions, 1.0 / static_cast<double>(completions));
  }

  const std::string& name() const noexcept { return name_; }
  std::span<const double> step_probs() const noexcept { return steps_; }
  std::size_t step_count() const noexcept { return steps_.size(); }
  std::size_t completions_per_step() const noexcept { return completions_; }
  std::span<const double> agent_rank_dist() const noexcept { return rank_dist_; }

 private:
  std::string name_;
  std::vector<double> steps_;
  std::size_t completions_;
  std::vector<double> rank_dist_;
};

using TaskSpec = std::variant<ChainTaskSpec, GraphTaskSpec, BoNTaskSpec>;

inline const std::string& task_name(const TaskSpec& task) {
  return std::visit([](const auto& t) -> const std::string& { return t.name(); }, task);
}

struct Attempt {
  std::size_t milestone = 0;
  bool success = false;

  friend bool operator==(const Attempt&, const Attempt&) = default;
};

/// A simulated run: the milestones attempted in order and their outcomes.
struct Trajectory {
  std::vector<Attempt> attempts;
  std::size_t messages_used = 0;
  /// Set when the run continued from a resampled earlier trajectory.
  std::shared_ptr<const Trajectory> prefix_origin;
  bool final_submission_correct = false;

  std::size_t leading_successes() const noexcept {
    std::size_t k = 0;
    while (k < attempts.size() && attempts[k].success) ++k;
    return k;
  }

  friend bool operator==(const Trajectory& a, const Trajectory& b) {
    if (a.attempts != b.attempts || a.messages_used != b.messages_used ||
        a.final_submission_correct != b.final_submission_correct) {
      return false;
    }
    if (!a.prefix_origin || !b.prefix_origin) return !a.prefix_origin && !b.prefix_origin;
    return *a.prefix_origin == *b.prefix_origin;
  }
};

namespace detail {

inline Trajectory run_attempts(std::span<const std::size_t> order,
                               const auto& success_prob_of, std::size_t budget, Rng& rng) {
  Trajectory t;
  for (std::size_t m : order) {
    if (t.messages_used >= budget) break;
    ++t.messages_used;
    const bool ok = rng.bernoulli(success_prob_of(m));
    t.attempts.push_back({m, ok});
    if (!ok) break;
  }
  t.final_submission_correct = t.attempts.size() == order.size() && t.leading_successes() == order.size();
  return t;
}

/// True iff the first `count` attempts are exactly order[0..count), all successful.
inline bool follows_order(const Trajectory& t, std::span<const std::size_t> order, std::size_t count) {
  if (t.attempts.size() < count || order.size() < count) return false;
  for (std::size_t k = 0; k < count; ++k) {
    if (!t.attempts[k].success || t.attempts[k].milestone != order[k]) return false;
  }
  return true;
}

inline std::vector<std::size_t> identity_order(std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  return order;
}

inline void require_prefix(const Trajectory& prefix, std::span<const std::size_t> order,
                           std::size_t milestone_index, std::size_t budget) {
  if (milestone_index == 0 || milestone_index > order.size()) {
    throw SpecError("milestone_index out of range");
  }
  const std::size_t needed = milestone_index - 1;
  if (prefix.attempts.size() != needed || !follows_order(prefix, order, needed)) {
    throw SpecError("prefix did not end at a successful submission of milestone " +
                    std::to_string(needed));
  }
  if (prefix.messages_used >= budget) throw SpecError("prefix has no messages left");
}

}  // namespace detail

inline Trajectory simulate_rollout(const ChainTaskSpec& task, std::uint64_t seed) {
  Rng rng(seed);
  const auto order = detail::identity_order(task.milestone_count());
  const auto probs = task.milestone_probs();
  return detail::run_attempts(order, [&](std::size_t m) { return probs[m]; },
                              task.message_budget(), rng);
}

/// Draws an attempt order from the policy, then attempts milestones in it.
inline Trajectory simulate_rollout(const GraphTaskSpec& task, std::uint64_t seed) {
  Rng rng(seed);
  const auto order = task.sample_order(rng);
  const auto ms = task.milestones();
  return detail::run_attempts(order, [&](std::size_t m) { return ms[m].success_prob; },
                              task.message_budget(), rng);
}

/// Continues a saved trajectory up to the submission of milestone
/// `milestone_index` (1-based). The prefix must consist of exactly the
/// successful attempts on milestones 1..milestone_index-1 and have budget
/// left. The returned trajectory holds exactly milestone_index attempts.
inline Trajectory simulate_from_prefix(const ChainTaskSpec& task, std::size_t milestone_index,
                                       std::shared_ptr<const Trajectory> prefix,
                                       std::uint64_t seed) {
  if (!prefix) throw SpecError("prefix must not be null");
  const auto order = detail::identity_order(task.milestone_count());
  detail::require_prefix(*prefix, order, milestone_index, task.message_budget());

  Rng rng(seed);
  Trajectory t;
  t.attempts = prefix->attempts;
  t.messages_used = prefix->messages_used + 1;
  const std::size_t m = milestone_index - 1;
  t.attempts.push_back({m, rng.bernoulli(task.milestone_probs()[m])});
  t.final_submission_correct = milestone_index == task.milestone_count() && t.attempts.back().success;
  if (!prefix->attempts.empty() || prefix->messages_used > 0) t.prefix_origin = std::move(prefix);
  return t;
}

/// Graph variant: the agent's next milestone is drawn from the order policy
/// conditioned on what it has already attempted. The milestone submission
/// succeeds only if that is the canonical next milestone and the attempt
/// succeeds.
inline Trajectory simulate_from_prefix(const GraphTaskSpec& task, std::size_t milestone_index,
                                       std::shared_ptr<const Trajectory> prefix,
                                       std::uint64_t seed) {
  if (!prefix) throw SpecError("prefix must not be null");
  const auto canonical = task.canonical_order();
  detail::require_prefix(*prefix, canonical, milestone_index, task.message_budget());

  Rng rng(seed);
  const auto order = task.sample_order(rng, canonical.first(milestone_index - 1));
  const std::size_t next = order[milestone_index - 1];
  Trajectory t;
  t.attempts = prefix->attempts;
  t.messages_used = prefix->messages_used + 1;
  t.attempts.push_back({next, rng.bernoulli(task.milestones()[next].success_prob)});
  t.final_submission_correct = milestone_index == task.milestone_count() &&
                               detail::follows_order(t, canonical, milestone_index);
  if (!prefix->attempts.empty() || prefix->messages_used > 0) t.prefix_origin = std::move(prefix);
  return t;
}

/// True iff stage `milestone_index` (1-based) of the milestone protocol was
/// passed: canonical milestones 1..milestone_index attempted in order, all
/// successful, within budget.
inline bool milestone_reached(const Trajectory& t, std::span<const std::size_t> canonical,
                              std::size_t milestone_index, std::size_t budget) {
  return t.messages_used <= budget && detail::follows_order(t, canonical, milestone_index);
}

namespace detail {

inline bool grade_impl(const Trajectory& t, std::span<const std::size_t> canonical,
                       std::size_t budget, GradingRegime regime) {
  const std::size_t n = canonical.size();
  if (t.messages_used > budget) return false;
  if (regime == GradingRegime::idealized) return follows_order(t, canonical, n);
  std::vector<bool> done(n, false);
  for (const auto& a : t.attempts) {
    if (a.success && a.milestone < n) done[a.milestone] = true;
  }
  return std::all_of(done.begin(), done.end(), [](bool b) { return b; });
}

}  // namespace detail

/// idealized: every milestone passed in canonical order.
/// outcome_based: every milestone passed, in whatever order was attempted.
inline bool grade(const Trajectory& t, const ChainTaskSpec& task, GradingRegime regime) {
  return detail::grade_impl(t, detail::identity_order(task.milestone_count()),
                            task.message_budget(), regime);
}

inline bool grade(const Trajectory& t, const GraphTaskSpec& task, GradingRegime regime) {
  return detail::grade_impl(t, task.canonical_order(), task.message_budget(), regime);
}

inline double exact_solve_rate(const ChainTaskSpec& task, GradingRegime /*regime*/) {
  if (task.message_budget() < task.milestone_count()) return 0.0;
  return stable_product(task.milestone_probs());
}

/// Enumerates every permutation of the milestones and sums the success
/// probability of each under the order policy.
inline double exact_solve_rate(const GraphTaskSpec& task, GradingRegime regime,
                               std::uint64_t permutation_limit = kDefaultPermutationLimit) {
  const std::size_t n = task.milestone_count();
  if (detail::factorial_saturating(n) > permutation_limit) {
    throw EnumerationLimitError("task '" + task.name() + "' has " + std::to_string(n) +
                                "! orders, above the permutation limit");
  }
  if (task.message_budget() < n) return 0.0;

  std::map<std::vector<std::size_t>, double> weight_of;
  for (const auto& entry : task.order_policy()) weight_of.emplace(entry.order, entry.weight);
  const auto canonical = task.canonical_order();

  double total = 0.0;
  std::vector<std::size_t> perm = detail::identity_order(n);
  std::vector<double> factors(n);
  do {
    const auto it = weight_of.find(perm);
    if (it == weight_of.end()) continue;
    if (regime == GradingRegime::idealized &&
        !std::equal(perm.begin(), perm.end(), canonical.begin(), canonical.end())) {
      continue;
    }
    for (std::size_t k = 0; k < n; ++k) factors[k] = task.milestones()[perm[k]].success_prob;
    total += it->second * stable_product(factors);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return total;
}

/// The agent-alone rate of making progress at every step.
inline double exact_solve_rate(const BoNTaskSpec& task, GradingRegime /*regime*/ = GradingRegime::outcome_based) {
  return stable_product(task.step_probs());
}

inline double exact_solve_rate(const TaskSpec& task, GradingRegime regime,
                               std::uint64_t permutation_limit = kDefaultPermutationLimit) {
  return std::visit(
      [&](const auto& t) -> double {
        if constexpr (std::is_same_v<std::decay_t<decltype(t)>, GraphTaskSpec>) {
          return exact_solve_rate(t, regime, permutation_limit);
        } else {
          return exact_solve_rate(t, regime);
        }
      },
      task);
}

/// Expert cost of picking the completion at 1-based rank `index`.
inline double index_cost_bits(std::size_t index) {
  const double i = static_cast<double>(index);
  return std::log2(i * (i + 1.0));
}

struct BoNRolloutRecord {
  std::vector<std::size_t> chosen_indices;
  double bits_total = 0.0;
  bool success = false;
  std::vector<std::vector<bool>> productivity_masks;

  friend bool operator==(const BoNRolloutRecord&, const BoNRolloutRecord&) = default;
};

/// Draws every step's productivity mask up front (each step from its own
/// derived stream, so appending steps leaves earlier masks untouched), then
/// lets the expert take the lowest-index productive completion per step.
inline BoNRolloutRecord simulate_bon_rollout(const BoNTaskSpec& task, std::uint64_t seed) {
  BoNRolloutRecord rec;
  const auto steps = task.step_probs();
  rec.productivity_masks.reserve(steps.size());
  for (std::size_t j = 0; j < steps.size(); ++j) {
    Rng rng(derive_seed(seed, j));
    std::vector<bool> mask(task.completions_per_step());
    for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = rng.bernoulli(steps[j]);
    rec.productivity_masks.push_back(std::move(mask));
  }

  rec.success = true;
  for (const auto& mask : rec.productivity_masks) {
    const auto first = std::find(mask.begin(), mask.end(), true);
    if (first == mask.end()) {
      rec.success = false;
      break;
    }
    const auto index = static_cast<std::size_t>(first - mask.begin()) + 1;
    rec.chosen_indices.push_back(index);
    rec.bits_total += index_cost_bits(index);
  }
  return rec;
}

}  // namespace solverate
