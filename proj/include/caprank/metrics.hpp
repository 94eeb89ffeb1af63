#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <nlohmann/json.hpp>

#include "caprank/assignment.hpp"
#include "caprank/capacity.hpp"
#include "caprank/io.hpp"
#include "caprank/objectives.hpp"

namespace caprank {

/// Capacity mixture of precision@c: sum_c P(W = c) * precision@c for
/// c = 1..N, with capacity beyond N contributing precision@N. Draws of
/// W = 0 process nothing and leave precision undefined, so the mixture is
/// conditioned on W >= 1 (an all-positive ranking scores 1 under every
/// capacity). Returns 0 for the all-idle capacity P(W >= 1) = 0.
inline double expected_precision(std::span<const std::size_t> order,
                                 std::span<const int> labels,
                                 const CapacityModel& capacity) {
  const std::size_t n = order.size();
  if (labels.size() != n) throw std::invalid_argument("length mismatch");
  if (n == 0) throw std::invalid_argument("empty ranking");
  validate(capacity.dist);
  double positives = 0.0;
  double total = 0.0;
  const double p_any = survival(capacity.dist, 1);
  double survival_next = p_any;
  double precision_n = 0.0;
  for (std::size_t c = 1; c <= n; ++c) {
    positives += labels[order[c - 1]];
    const double precision_c = positives / static_cast<double>(c);
    const double survival_c = survival_next;
    survival_next = survival(capacity.dist, c + 1);
    const double pmf = std::max(0.0, survival_c - survival_next);
    total += pmf * precision_c;
    precision_n = precision_c;
  }
  total += survival_next * precision_n;  // capacity above N stays idle
  if (p_any <= 0.0) return 0.0;
  return total / p_any;
}

/// Alternative capacity weighting of precision: sum_i w_i y_(i) / sum_i w_i.
inline std::optional<double> weighted_precision(std::span<const std::size_t> order,
                                                std::span<const int> labels,
                                                const WorkerWeights& w) {
  if (order.size() != labels.size() || order.size() != w.size()) {
    throw std::invalid_argument("length mismatch");
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    num += w[i] * labels[order[i]];
    den += w[i];
  }
  if (den <= 0.0) return std::nullopt;
  return num / den;
}

/// Mean of precision@k over the ranks k holding positives; nullopt when the
/// ranking holds no positive at all.
inline std::optional<double> average_precision(std::span<const std::size_t> order,
                                               std::span<const int> labels) {
  if (order.size() != labels.size()) throw std::invalid_argument("length mismatch");
  double positives = 0.0;
  double total = 0.0;
  for (std::size_t k = 1; k <= order.size(); ++k) {
    if (labels[order[k - 1]] == 1) {
      positives += 1.0;
      total += positives / static_cast<double>(k);
    }
  }
  if (positives == 0.0) return std::nullopt;
  return total / positives;
}

namespace detail {

/// Average-tie ranks (1-based) of the values.
inline std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

inline std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  double mean_a = 0.0, mean_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    mean_a += a[i];
    mean_b += b[i];
  }
  mean_a /= n;
  mean_b /= n;
  double cov = 0.0, var_a = 0.0, var_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - mean_a;
    const double db = b[i] - mean_b;
    cov += da * db;
    var_a += da * da;
    var_b += db * db;
  }
  if (var_a <= 0.0 || var_b <= 0.0) return std::nullopt;
  return cov / std::sqrt(var_a * var_b);
}

}  // namespace detail

/// Spearman's rank correlation with average-tie ranks; nullopt when either
/// side has zero rank variance.
inline std::optional<double> spearman_rho(std::span<const double> scores,
                                          std::span<const double> rewards) {
  if (scores.size() != rewards.size()) throw std::invalid_argument("length mismatch");
  if (scores.size() < 2) throw std::invalid_argument("need at least two instances");
  const std::vector<double> ra = detail::average_ranks(scores);
  const std::vector<double> rb = detail::average_ranks(rewards);
  return detail::pearson(ra, rb);
}

struct AucpcResult {
  /// (area_model - area_random) / (area_optimal - area_random), clamped to
  /// [0, 1]; nullopt when all rewards are equal.
  std::optional<double> normalized;
  /// The unclamped ratio (below-random rankings go negative).
  double raw = std::numeric_limits<double>::quiet_NaN();
};

/// Area under the cumulative profit curve C(k) = sum_{i<=k} rewards[order[i]]
/// by trapezoid over k = 0..N, normalized between the expected random curve
/// (straight line to the total) and the descending-reward optimum.
inline AucpcResult aucpc(std::span<const std::size_t> order,
                         std::span<const double> rewards) {
  const std::size_t n = order.size();
  if (rewards.size() != n) throw std::invalid_argument("length mismatch");
  if (n == 0) throw std::invalid_argument("empty ranking");

  const auto curve_area = [n](auto reward_at) {
    double cumulative = 0.0;
    double area = 0.0;
    for (std::size_t k = 1; k <= n; ++k) {
      const double prev = cumulative;
      cumulative += reward_at(k - 1);
      area += (prev + cumulative) / 2.0;
    }
    return area;
  };

  const double area_model = curve_area([&](std::size_t i) { return rewards[order[i]]; });
  std::vector<double> sorted(rewards.begin(), rewards.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  const double area_optimal = curve_area([&](std::size_t i) { return sorted[i]; });
  double total = 0.0;
  for (double r : rewards) total += r;
  const double mean = total / static_cast<double>(n);
  const double area_random = curve_area([&](std::size_t) { return mean; });

  AucpcResult out;
  if (area_optimal - area_random <= 0.0) return out;
  out.raw = (area_model - area_random) / (area_optimal - area_random);
  out.normalized = std::clamp(out.raw, 0.0, 1.0);
  return out;
}

struct AtKCurves {
  std::vector<double> precision_at_k;
  std::vector<double> profit_at_k;  // cumulative
};

inline AtKCurves at_k_curves(std::span<const std::size_t> order,
                             std::span<const int> labels,
                             std::span<const double> rewards, std::size_t k_max) {
  const std::size_t n = order.size();
  if (labels.size() != n || rewards.size() != n) {
    throw std::invalid_argument("length mismatch");
  }
  if (k_max > n) throw std::invalid_argument("k_max exceeds ranking length");
  AtKCurves out;
  out.precision_at_k.resize(k_max);
  out.profit_at_k.resize(k_max);
  double positives = 0.0;
  double profit = 0.0;
  for (std::size_t k = 1; k <= k_max; ++k) {
    positives += labels[order[k - 1]];
    profit += rewards[order[k - 1]];
    out.precision_at_k[k - 1] = positives / static_cast<double>(k);
    out.profit_at_k[k - 1] = profit;
  }
  return out;
}

struct FriedmanResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::vector<double> mean_ranks;           // per model, rank 1 = best
  double critical_difference = 0.0;         // Bonferroni-Dunn at alpha
  std::size_t best = 0;                     // lowest mean rank
  std::vector<bool> within_cd_of_best;      // per model
  double alpha = 0.05;
};

/// Friedman test over a models x datasets table (higher values rank better),
/// with the Bonferroni-Dunn critical difference against the best-ranked
/// model. Ranks use average positions on ties; the p-value comes from the
/// chi-square distribution with (models - 1) degrees of freedom.
inline FriedmanResult friedman_bonferroni_dunn(
    const std::vector<std::vector<double>>& table, double alpha = 0.05) {
  const std::size_t m = table.size();
  if (m < 2) throw std::invalid_argument("need at least two models");
  const std::size_t n = table[0].size();
  if (n < 2) throw std::invalid_argument("need at least two datasets");
  for (const auto& row : table) {
    if (row.size() != n) throw std::invalid_argument("ragged metric table");
  }

  FriedmanResult out;
  out.alpha = alpha;
  out.mean_ranks.assign(m, 0.0);
  std::vector<double> column(m);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) column[i] = -table[i][j];  // rank 1 = highest
    const std::vector<double> ranks = detail::average_ranks(column);
    for (std::size_t i = 0; i < m; ++i) out.mean_ranks[i] += ranks[i];
  }
  for (double& r : out.mean_ranks) r /= static_cast<double>(n);

  const double md = static_cast<double>(m);
  const double nd = static_cast<double>(n);
  double sum_sq = 0.0;
  for (double r : out.mean_ranks) {
    const double dev = r - (md + 1.0) / 2.0;
    sum_sq += dev * dev;
  }
  out.statistic = 12.0 * nd / (md * (md + 1.0)) * sum_sq;

  const boost::math::chi_squared chi2(md - 1.0);
  out.p_value = boost::math::cdf(boost::math::complement(chi2, out.statistic));

  const boost::math::normal norm;
  const double z = boost::math::quantile(norm, 1.0 - alpha / (2.0 * (md - 1.0)));
  out.critical_difference = z * std::sqrt(md * (md + 1.0) / (6.0 * nd));

  out.best = static_cast<std::size_t>(
      std::min_element(out.mean_ranks.begin(), out.mean_ranks.end()) -
      out.mean_ranks.begin());
  out.within_cd_of_best.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    out.within_cd_of_best[i] =
        out.mean_ranks[i] - out.mean_ranks[out.best] <= out.critical_difference;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bundled evaluation of one ranking
// ---------------------------------------------------------------------------

struct MetricReport {
  double expected_precision = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> weighted_precision;
  double expected_profit = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> normalized_expected_profit;  // profit / ideal profit
  std::optional<double> average_precision;
  std::optional<double> spearman_rho;
  std::optional<double> aucpc;
  double aucpc_raw = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> ndcg;  // capacity-discounted, reward relevance
  std::vector<double> precision_at_k;
  std::vector<double> profit_at_k;

  nlohmann::json to_json(bool include_curves = true) const {
    nlohmann::json j;
    const auto set_opt = [&j](const char* key, const std::optional<double>& v) {
      if (v) {
        j[key] = *v;
      } else {
        j[key] = nullptr;
      }
    };
    j["expected_precision"] = expected_precision;
    set_opt("weighted_precision", weighted_precision);
    j["expected_profit"] = expected_profit;
    set_opt("normalized_expected_profit", normalized_expected_profit);
    set_opt("average_precision", average_precision);
    set_opt("spearman_rho", spearman_rho);
    set_opt("aucpc", aucpc);
    j["aucpc_raw"] = aucpc_raw;
    set_opt("ndcg", ndcg);
    if (include_curves) {
      j["precision_at_k"] = precision_at_k;
      j["profit_at_k"] = profit_at_k;
    }
    return j;
  }

  /// Scalar metrics in a fixed order, for the long-format CSV.
  std::vector<std::pair<std::string, std::optional<double>>> named_values() const {
    const auto wrap = [](double v) -> std::optional<double> {
      return std::isnan(v) ? std::nullopt : std::optional<double>(v);
    };
    return {{"expected_precision", wrap(expected_precision)},
            {"weighted_precision", weighted_precision},
            {"expected_profit", wrap(expected_profit)},
            {"normalized_expected_profit", normalized_expected_profit},
            {"average_precision", average_precision},
            {"spearman_rho", spearman_rho},
            {"aucpc", aucpc},
            {"aucpc_raw", wrap(aucpc_raw)},
            {"ndcg", ndcg}};
  }
};

/// Evaluates one ranking against true labels and rewards. ranking_keys are
/// the scores that produced the order (used for the rank correlation);
/// weights must cover the full ranking length.
inline MetricReport evaluate_ranking(std::span<const std::size_t> order,
                                     std::span<const int> labels,
                                     std::span<const double> rewards,
                                     std::span<const double> keys,
                                     const CapacityModel& capacity,
                                     const WorkerWeights& w) {
  const std::size_t n = order.size();
  if (w.size() != n) throw std::invalid_argument("weights do not cover the ranking");
  MetricReport report;
  report.expected_precision = expected_precision(order, labels, capacity);
  report.weighted_precision = weighted_precision(order, labels, w);
  report.expected_profit = expected_profit(order, rewards, w);
  const std::vector<std::size_t> ideal = descending_order(rewards);
  const double ideal_profit = expected_profit(ideal, rewards, w);
  if (ideal_profit > 0.0) {
    report.normalized_expected_profit = report.expected_profit / ideal_profit;
  }
  report.average_precision = average_precision(order, labels);
  report.spearman_rho = spearman_rho(keys, rewards);
  const AucpcResult auc = aucpc(order, rewards);
  report.aucpc = auc.normalized;
  report.aucpc_raw = auc.raw;
  report.ndcg = ndcg(order, rewards, w);
  const AtKCurves curves = at_k_curves(order, labels, rewards, n);
  report.precision_at_k = std::move(curves.precision_at_k);
  report.profit_at_k = std::move(curves.profit_at_k);
  return report;
}

/// Long-format rows: dataset, model, metric, value. Curves are written by
/// the harness's curves.csv instead.
inline void append_metrics_csv(std::ostream& out, const std::string& dataset,
                               const std::string& model, const MetricReport& report) {
  for (const auto& [name, value] : report.named_values()) {
    out << dataset << ',' << model << ',' << name << ',';
    if (value) out << detail::format_double(*value);
    out << '\n';
  }
}

}  // namespace caprank
