#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "caprank/capacity.hpp"
#include "caprank/gbm.hpp"
#include "caprank/io.hpp"
#include "caprank/objectives.hpp"
#include "caprank/tasks.hpp"

namespace caprank {

/// A permutation of task indices (rank position -> task index) together with
/// its expected profit once evaluated.
struct AssignmentPlan {
  std::vector<std::size_t> order;
  double expected_profit = std::numeric_limits<double>::quiet_NaN();
};

/// How model outputs are turned into ranking keys.
enum class RankMode { kProbability, kExpectedReward, kRawScore };

inline std::string to_string(RankMode m) {
  switch (m) {
    case RankMode::kProbability: return "probability";
    case RankMode::kExpectedReward: return "expected_reward";
    case RankMode::kRawScore: return "raw_score";
  }
  throw std::logic_error("unreachable");
}

/// The per-task sort keys for a mode: predicted success probability,
/// predicted expected reward p*v+ + (1-p)*v-, or the raw model score.
inline std::vector<double> ranking_keys(const BoostedModel& model, const TaskSet& tasks,
                                        RankMode mode) {
  const FeatureMatrix features = tasks.feature_matrix();
  if ((mode == RankMode::kProbability || mode == RankMode::kExpectedReward) &&
      !is_classification(model.objective)) {
    std::cerr << "warning: " << to_string(mode) << " ranking uses sigmoid-mapped scores of a "
              << to_string(model.objective) << " model\n";
  }
  if (mode == RankMode::kRawScore && is_classification(model.objective)) {
    std::cerr << "warning: raw-score ranking of a " << to_string(model.objective)
              << " classification model\n";
  }
  switch (mode) {
    case RankMode::kProbability:
      return model.predict_proba(features);
    case RankMode::kExpectedReward: {
      std::vector<double> keys = model.predict_proba(features);
      for (std::size_t i = 0; i < keys.size(); ++i) {
        const Payoffs v = payoffs(tasks.tasks[i]);
        keys[i] = keys[i] * v.v_plus + (1.0 - keys[i]) * v.v_minus;
      }
      return keys;
    }
    case RankMode::kRawScore:
      return model.predict(features);
  }
  throw std::logic_error("unreachable");
}

/// Sorts tasks by the mode's key, descending; ties keep the original index
/// order. The returned plan carries no profit yet (true rewards are unknown
/// at allocation time); evaluate with expected_profit.
inline AssignmentPlan rank_by_predicted_reward(const BoostedModel& model,
                                               const TaskSet& tasks, RankMode mode) {
  AssignmentPlan plan;
  plan.order = descending_order(ranking_keys(model, tasks, mode));
  return plan;
}

/// sum_i w_i * rewards[order[i]]. Evaluation passes true rewards; training
/// time diagnostics may pass predicted ones.
inline double expected_profit(std::span<const std::size_t> order,
                              std::span<const double> rewards, const WorkerWeights& w) {
  if (order.size() != rewards.size() || order.size() != w.size()) {
    throw std::invalid_argument("length mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) total += w[i] * rewards[order[i]];
  return total;
}

/// Exhaustive-permutation optimum of the balanced assignment, used as a
/// verification oracle for the analytic sort-by-reward solution. Returns the
/// lexicographically smallest maximizer.
inline std::pair<std::vector<std::size_t>, double> brute_force_optimal(
    std::span<const double> rewards, const WorkerWeights& w) {
  const std::size_t n = rewards.size();
  if (w.size() != n) throw std::invalid_argument("length mismatch");
  if (n == 0 || n > 10) {
    throw std::invalid_argument("brute_force_optimal handles 1 <= N <= 10");
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::vector<std::size_t> best = perm;
  double best_profit = expected_profit(perm, rewards, w);
  while (std::next_permutation(perm.begin(), perm.end())) {
    const double profit = expected_profit(perm, rewards, w);
    if (profit > best_profit) {
      best_profit = profit;
      best = perm;
    }
  }
  return {best, best_profit};
}

/// CSV serialization: rank, task_id, score, predicted_reward, weight.
/// predicted_reward is left empty when the model cannot produce one (raw
/// ranking scores are not reward estimates).
inline void write_plan_csv(std::ostream& out, const AssignmentPlan& plan,
                           std::span<const double> scores,
                           std::span<const double> predicted_rewards,
                           const WorkerWeights& w) {
  out << "rank,task_id,score,predicted_reward,weight\n";
  for (std::size_t i = 0; i < plan.order.size(); ++i) {
    const std::size_t task = plan.order[i];
    out << (i + 1) << ',' << task << ',' << detail::format_double(scores[task]) << ',';
    if (!predicted_rewards.empty()) out << detail::format_double(predicted_rewards[task]);
    out << ',' << detail::format_double(w[i]) << '\n';
  }
}

}  // namespace caprank
