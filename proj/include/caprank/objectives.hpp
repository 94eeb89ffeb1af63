#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "caprank/capacity.hpp"
#include "caprank/gbm.hpp"
#include "caprank/tasks.hpp"

namespace caprank {

// ---------------------------------------------------------------------------
// Classification losses
// ---------------------------------------------------------------------------

struct LossGradHess {
  double loss = 0.0;
  std::vector<double> grad;
  std::vector<double> hess;
};

namespace detail {

inline double ce_point_loss(double score, int label) {
  const double p = std::clamp(sigmoid(score), 1e-12, 1.0 - 1e-12);
  return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

struct GradHessPoint {
  double g = 0.0;
  double h = 0.0;
};

inline GradHessPoint ce_point(double score, int label) {
  const double p = sigmoid(score);
  return {p - static_cast<double>(label), p * (1.0 - p)};
}

inline double aec_point_loss(double score, int label, const CostMatrix& c) {
  const double p = sigmoid(score);
  return label == 1 ? p * c.c_tp + (1.0 - p) * c.c_fn
                    : p * c.c_fp + (1.0 - p) * c.c_tn;
}

// Exact first and second derivative of the per-instance expected cost
// through the sigmoid; the second derivative is floored at zero.
inline GradHessPoint aec_point(double score, int label, const CostMatrix& c) {
  const double p = sigmoid(score);
  const double delta = label == 1 ? c.c_tp - c.c_fn : c.c_fp - c.c_tn;
  const double pq = p * (1.0 - p);
  return {pq * delta, std::max(0.0, pq * (1.0 - 2.0 * p) * delta)};
}

}  // namespace detail

/// Negative mean log-likelihood of a logistic model, with per-instance
/// gradient p - y and hessian p(1 - p).
inline LossGradHess ce_loss(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("length mismatch");
  LossGradHess out;
  out.grad.resize(scores.size());
  out.hess.resize(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    total += detail::ce_point_loss(scores[i], labels[i]);
    const auto gh = detail::ce_point(scores[i], labels[i]);
    out.grad[i] = gh.g;
    out.hess[i] = gh.h;
  }
  out.loss = total / static_cast<double>(scores.size());
  return out;
}

/// Mean expected misclassification cost when predicting sigmoid(score).
inline LossGradHess aec_loss(std::span<const double> scores, std::span<const int> labels,
                             std::span<const CostMatrix> costs) {
  if (scores.size() != labels.size() || scores.size() != costs.size()) {
    throw std::invalid_argument("length mismatch");
  }
  LossGradHess out;
  out.grad.resize(scores.size());
  out.hess.resize(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    total += detail::aec_point_loss(scores[i], labels[i], costs[i]);
    const auto gh = detail::aec_point(scores[i], labels[i], costs[i]);
    out.grad[i] = gh.g;
    out.hess[i] = gh.h;
  }
  out.loss = total / static_cast<double>(scores.size());
  return out;
}

// ---------------------------------------------------------------------------
// Capacity-discounted DCG / NDCG
// ---------------------------------------------------------------------------

/// Indices sorted by key descending; ties keep the original index order.
inline std::vector<std::size_t> descending_order(std::span<const double> keys) {
  std::vector<std::size_t> order(keys.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return keys[a] > keys[b]; });
  return order;
}

/// DCG with the worker weights as discount and rel as (possibly negative)
/// relevance: sum_i w_i * rel[order[i]].
inline double dcg(std::span<const std::size_t> order, std::span<const double> rel,
                  const WorkerWeights& w) {
  if (order.size() != rel.size() || order.size() != w.size()) {
    throw std::invalid_argument("length mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) total += w[i] * rel[order[i]];
  return total;
}

inline double dcg_of_scores(std::span<const double> scores, std::span<const double> rel,
                            const WorkerWeights& w) {
  const std::vector<std::size_t> order = descending_order(scores);
  return dcg(order, rel, w);
}

/// DCG of rel sorted descending.
inline double ideal_dcg(std::span<const double> rel, const WorkerWeights& w) {
  const std::vector<std::size_t> order = descending_order(rel);
  return dcg(order, rel, w);
}

/// DCG / IDCG. Degenerate queries (IDCG <= 0, which can happen with negative
/// relevances) have no meaningful normalization and yield nullopt.
inline std::optional<double> ndcg(std::span<const std::size_t> order,
                                  std::span<const double> rel, const WorkerWeights& w) {
  const double ideal = ideal_dcg(rel, w);
  if (ideal <= 0.0) return std::nullopt;
  return dcg(order, rel, w) / ideal;
}

inline std::optional<double> ndcg_of_scores(std::span<const double> scores,
                                            std::span<const double> rel,
                                            const WorkerWeights& w) {
  const std::vector<std::size_t> order = descending_order(scores);
  return ndcg(order, rel, w);
}

// ---------------------------------------------------------------------------
// LambdaRank gradients with capacity discounts
// ---------------------------------------------------------------------------

struct LambdaOptions {
  double sigmoid_steepness = 1.0;
  /// Pairs are formed only when at least one member ranks inside the top
  /// pair_cutoff positions of the current ordering. 0 picks the smallest
  /// rank whose weight falls below cutoff_weight_epsilon; pairs entirely in
  /// that tail carry discount differences of at most the epsilon.
  std::size_t pair_cutoff = 0;
  double cutoff_weight_epsilon = 1e-4;
  bool exact_pairs = false;
  /// Splits training data into consecutive queries of this size; 0 treats
  /// the whole set as one query sharing a single capacity pool.
  std::size_t query_block = 0;
};

/// Tabulated logistic curve for the O(N^2) pair loop.
class SigmoidTable {
 public:
  explicit SigmoidTable(double steepness, std::size_t size = std::size_t{1} << 19,
                        double half_range = 30.0)
      : steepness_(steepness),
        half_range_(half_range),
        scale_(static_cast<double>(size - 1) / (2.0 * half_range)),
        values_(size) {
    for (std::size_t i = 0; i < size; ++i) {
      const double u = -half_range + static_cast<double>(i) / scale_;
      values_[i] = 1.0 / (1.0 + std::exp(u));
    }
  }

  /// 1 / (1 + exp(steepness * score_diff))
  double rho(double score_diff) const {
    const double u = steepness_ * score_diff;
    if (u <= -half_range_) return values_.front();
    if (u >= half_range_) return values_.back();
    return values_[static_cast<std::size_t>((u + half_range_) * scale_ + 0.5)];
  }

  double steepness() const { return steepness_; }

 private:
  double steepness_;
  double half_range_;
  double scale_;
  std::vector<double> values_;
};

struct LambdaGradients {
  std::vector<double> grad;
  std::vector<double> hess;
  bool degenerate = false;
};

namespace detail {

/// |NDCG after swapping two ranked positions - NDCG before|: only the two
/// positions change, so the delta factors into the discount gap times the
/// relevance gap over IDCG.
inline double swap_delta_ndcg(double weight_rank_a, double weight_rank_b, double rel_a,
                              double rel_b, double idcg) {
  return std::abs(weight_rank_a - weight_rank_b) * std::abs(rel_a - rel_b) / idcg;
}

inline LambdaGradients lambda_core(std::span<const double> scores,
                                   std::span<const double> rel,
                                   std::span<const double> weights,
                                   const LambdaOptions& opts,
                                   const SigmoidTable* table) {
  const std::size_t n = scores.size();
  LambdaGradients out;
  out.grad.assign(n, 0.0);
  out.hess.assign(n, 0.0);
  if (n < 2) {
    out.degenerate = true;
    return out;
  }
  const bool all_equal =
      std::all_of(rel.begin(), rel.end(), [&](double r) { return r == rel[0]; });
  if (all_equal) {
    out.degenerate = true;
    return out;
  }

  std::vector<double> rel_sorted(rel.begin(), rel.end());
  std::sort(rel_sorted.begin(), rel_sorted.end(), std::greater<double>());
  double idcg = 0.0;
  for (std::size_t i = 0; i < n; ++i) idcg += weights[i] * rel_sorted[i];
  if (idcg <= 0.0) {
    out.degenerate = true;
    return out;
  }

  const std::vector<std::size_t> order = descending_order(scores);

  std::size_t limit = n;
  if (!opts.exact_pairs) {
    if (opts.pair_cutoff > 0) {
      limit = std::min(opts.pair_cutoff, n);
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        if (weights[i] < opts.cutoff_weight_epsilon) {
          limit = i + 1;
          break;
        }
      }
    }
  }

  const double steepness = opts.sigmoid_steepness;
  for (std::size_t pi = 0; pi + 1 < n && pi < limit; ++pi) {
    const std::size_t a = order[pi];
    const double w_i = weights[pi];
    for (std::size_t pj = pi + 1; pj < n; ++pj) {
      const std::size_t b = order[pj];
      if (rel[a] == rel[b]) continue;
      const std::size_t hi = rel[a] > rel[b] ? a : b;
      const std::size_t lo = hi == a ? b : a;
      const double delta_ndcg = swap_delta_ndcg(w_i, weights[pj], rel[a], rel[b], idcg);
      const double score_diff = scores[hi] - scores[lo];
      const double rho = table != nullptr
                             ? table->rho(score_diff)
                             : 1.0 / (1.0 + std::exp(steepness * score_diff));
      const double lambda = rho * delta_ndcg;
      out.grad[hi] -= lambda;
      out.grad[lo] += lambda;
      const double h = steepness * rho * (1.0 - rho) * delta_ndcg;
      out.hess[hi] += h;
      out.hess[lo] += h;
    }
  }
  return out;
}

}  // namespace detail

/// Pairwise lambda gradients of the capacity-discounted NDCG. For each pair
/// with rel_i > rel_j the swap delta |w_rank(i) - w_rank(j)| * |rel_i -
/// rel_j| / IDCG is accumulated, signed so that descending the returned
/// gradient improves NDCG. Degenerate queries (fewer than two instances, all
/// relevances equal, or IDCG <= 0) are flagged and get zero gradients.
inline LambdaGradients lambda_grad_hess(std::span<const double> scores,
                                        std::span<const double> rel,
                                        const WorkerWeights& w,
                                        const LambdaOptions& opts = {},
                                        const SigmoidTable* table = nullptr) {
  if (scores.size() != rel.size()) throw std::invalid_argument("length mismatch");
  if (w.size() < scores.size()) {
    throw std::invalid_argument("worker weights shorter than query");
  }
  return detail::lambda_core(scores, rel,
                             std::span<const double>(w.weights.data(), scores.size()),
                             opts, table);
}

// ---------------------------------------------------------------------------
// Bound training objectives
// ---------------------------------------------------------------------------

/// A training objective bound to its data: labels for CE, labels plus cost
/// matrices for AEC, relevance plus worker weights for the ranking kinds.
/// Satisfies the objective interface expected by caprank::fit.
class BoundObjective {
 public:
  BoundObjective(ObjectiveKind kind, std::vector<int> labels,
                 std::vector<CostMatrix> costs, std::vector<double> relevance,
                 std::vector<double> weights, LambdaOptions opts)
      : kind_(kind),
        labels_(std::move(labels)),
        costs_(std::move(costs)),
        relevance_(std::move(relevance)),
        weights_(std::move(weights)),
        opts_(opts) {
    if (!is_classification(kind_)) {
      table_.emplace(opts_.sigmoid_steepness);
    }
  }

  ObjectiveKind kind() const { return kind_; }
  std::size_t size() const { return labels_.size(); }
  const std::vector<double>& relevance() const { return relevance_; }
  const std::vector<double>& worker_weights() const { return weights_; }

  /// Logit of the clamped positive-class prior for the classification
  /// objectives; 0 for the ranking objectives.
  double initial_score() const {
    if (!is_classification(kind_)) return 0.0;
    double positives = 0.0;
    for (int y : labels_) positives += y;
    const double prior =
        std::clamp(positives / static_cast<double>(labels_.size()), 1e-6, 1.0 - 1e-6);
    return std::log(prior / (1.0 - prior));
  }

  double evaluate(std::span<const double> scores) const {
    const std::size_t n = labels_.size();
    if (scores.size() != n) throw std::invalid_argument("length mismatch");
    switch (kind_) {
      case ObjectiveKind::kCrossEntropy: {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          total += detail::ce_point_loss(scores[i], labels_[i]);
        }
        return total / static_cast<double>(n);
      }
      case ObjectiveKind::kExpectedCost: {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          total += detail::aec_point_loss(scores[i], labels_[i], costs_[i]);
        }
        return total / static_cast<double>(n);
      }
      default: {
        // 1 - mean NDCG over queries; reported for monitoring.
        double total = 0.0;
        std::size_t queries = 0;
        for_each_query(scores.size(), [&](std::size_t begin, std::size_t len) {
          const auto value = ndcg_of_scores(
              scores.subspan(begin, len),
              std::span<const double>(relevance_.data() + begin, len),
              WorkerWeights{std::vector<double>(weights_.begin(), weights_.begin() + len)});
          if (value) {
            total += *value;
            ++queries;
          }
        });
        return queries == 0 ? 0.0 : 1.0 - total / static_cast<double>(queries);
      }
    }
  }

  void grad_hess(std::span<const double> scores, std::span<double> grad,
                 std::span<double> hess) const {
    const std::size_t n = labels_.size();
    if (scores.size() != n || grad.size() != n || hess.size() != n) {
      throw std::invalid_argument("length mismatch");
    }
    switch (kind_) {
      case ObjectiveKind::kCrossEntropy:
        for (std::size_t i = 0; i < n; ++i) {
          const auto gh = detail::ce_point(scores[i], labels_[i]);
          grad[i] = gh.g;
          hess[i] = gh.h;
        }
        break;
      case ObjectiveKind::kExpectedCost:
        for (std::size_t i = 0; i < n; ++i) {
          const auto gh = detail::aec_point(scores[i], labels_[i], costs_[i]);
          grad[i] = gh.g;
          hess[i] = gh.h;
        }
        break;
      default:
        degenerate_ = true;
        for_each_query(n, [&](std::size_t begin, std::size_t len) {
          const LambdaGradients g = detail::lambda_core(
              scores.subspan(begin, len),
              std::span<const double>(relevance_.data() + begin, len),
              std::span<const double>(weights_.data(), len), opts_,
              table_ ? &*table_ : nullptr);
          if (!g.degenerate) degenerate_ = false;
          std::copy(g.grad.begin(), g.grad.end(), grad.begin() + begin);
          std::copy(g.hess.begin(), g.hess.end(), hess.begin() + begin);
        });
        break;
    }
  }

  /// True when the last ranking grad_hess call saw only degenerate queries.
  bool last_degenerate() const { return degenerate_; }

 private:
  template <class Fn>
  void for_each_query(std::size_t n, Fn&& fn) const {
    const std::size_t block = opts_.query_block == 0 ? n : opts_.query_block;
    for (std::size_t begin = 0; begin < n; begin += block) {
      fn(begin, std::min(block, n - begin));
    }
  }

  ObjectiveKind kind_;
  std::vector<int> labels_;
  std::vector<CostMatrix> costs_;
  std::vector<double> relevance_;
  std::vector<double> weights_;
  LambdaOptions opts_;
  std::optional<SigmoidTable> table_;
  mutable bool degenerate_ = false;
};

/// Binds the objective for training: labels as relevance for
/// LambdaAccuracy, rewards for LambdaCost; the classification kinds ignore
/// the worker weights. Rewards may be omitted when cost matrices are given.
inline BoundObjective make_objective(ObjectiveKind kind, std::vector<int> labels,
                                     std::vector<CostMatrix> costs,
                                     std::vector<double> rewards,
                                     const WorkerWeights& weights,
                                     const LambdaOptions& opts = {}) {
  const std::size_t n = labels.size();
  if (n == 0) throw std::invalid_argument("empty training data");
  switch (kind) {
    case ObjectiveKind::kCrossEntropy:
      return BoundObjective(kind, std::move(labels), {}, {}, {}, opts);
    case ObjectiveKind::kExpectedCost:
      if (costs.size() != n) {
        throw std::invalid_argument("cost matrices required for the expected-cost objective");
      }
      return BoundObjective(kind, std::move(labels), std::move(costs), {}, {}, opts);
    case ObjectiveKind::kLambdaAccuracy: {
      if (weights.size() < n) {
        throw std::invalid_argument("worker weights required for ranking objectives");
      }
      std::vector<double> rel(n);
      for (std::size_t i = 0; i < n; ++i) rel[i] = static_cast<double>(labels[i]);
      return BoundObjective(kind, std::move(labels), {}, std::move(rel),
                            weights.weights, opts);
    }
    case ObjectiveKind::kLambdaCost: {
      if (weights.size() < n) {
        throw std::invalid_argument("worker weights required for ranking objectives");
      }
      if (rewards.empty()) {
        if (costs.size() != n) {
          throw std::invalid_argument(
              "rewards (or cost matrices) required for the cost-sensitive ranking objective");
        }
        rewards.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
          const Payoffs v = payoffs(costs[i]);
          rewards[i] = labels[i] == 1 ? v.v_plus : v.v_minus;
        }
      } else if (rewards.size() != n) {
        throw std::invalid_argument("length mismatch");
      }
      return BoundObjective(kind, std::move(labels), {}, std::move(rewards),
                            weights.weights, opts);
    }
  }
  throw std::logic_error("unreachable");
}

inline BoundObjective make_objective(ObjectiveKind kind, const TaskSet& data,
                                     const WorkerWeights& weights,
                                     const LambdaOptions& opts = {}) {
  return make_objective(kind, data.labels(), data.cost_matrices(), data.rewards(),
                        weights, opts);
}

}  // namespace caprank
