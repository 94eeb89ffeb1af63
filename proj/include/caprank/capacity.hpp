#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace caprank {

/// P(Z <= x) for standard normal Z; erfc keeps the absolute error well below
/// 1e-12 across the whole range.
inline double standard_normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

/// Fixed capacity: exactly c workers are always available.
struct DeterministicCapacity {
  std::int64_t c = 0;
};

/// W = floor(X) with X ~ LogNormal(mu_log, sigma). Flooring the continuous
/// variate keeps the survival function exact at integer ranks:
/// P(W >= i) = P(X >= i) for every integer i >= 1.
struct LognormalCapacity {
  double mu_log = 0.0;
  double sigma = 1.0;
};

/// Histogram of observed capacities: counts[k] observations of W == k.
/// Counts are normalized internally, so raw capacity logs can be passed in.
struct EmpiricalCapacity {
  std::vector<double> counts;
};

using CapacityDistribution =
    std::variant<DeterministicCapacity, LognormalCapacity, EmpiricalCapacity>;

/// A capacity distribution together with the number of ranks to weight.
struct CapacityModel {
  CapacityDistribution dist;
  std::size_t horizon = 1;

  static CapacityModel deterministic(std::int64_t c, std::size_t horizon) {
    return {DeterministicCapacity{c}, horizon};
  }
  static CapacityModel lognormal(double mu_log, double sigma, std::size_t horizon) {
    return {LognormalCapacity{mu_log, sigma}, horizon};
  }
  static CapacityModel empirical(std::vector<double> counts, std::size_t horizon) {
    return {EmpiricalCapacity{std::move(counts)}, horizon};
  }
};

inline void validate(const CapacityDistribution& dist) {
  if (const auto* d = std::get_if<DeterministicCapacity>(&dist)) {
    if (d->c < 0) throw std::invalid_argument("deterministic capacity must be >= 0");
  } else if (const auto* ln = std::get_if<LognormalCapacity>(&dist)) {
    if (!std::isfinite(ln->mu_log) || !std::isfinite(ln->sigma) || ln->sigma <= 0.0) {
      throw std::invalid_argument("lognormal capacity requires finite mu_log and sigma > 0");
    }
  } else {
    const auto& e = std::get<EmpiricalCapacity>(dist);
    if (e.counts.empty()) throw std::invalid_argument("empirical capacity requires counts");
    double total = 0.0;
    for (double c : e.counts) {
      if (!(c >= 0.0)) throw std::invalid_argument("empirical counts must be nonnegative");
      total += c;
    }
    if (total <= 0.0) throw std::invalid_argument("empirical counts must not all be zero");
  }
}

inline void validate(const CapacityModel& model) {
  if (model.horizon == 0) throw std::invalid_argument("capacity horizon must be >= 1");
  validate(model.dist);
}

/// Monotone nonincreasing per-rank availability weights, each in [0, 1].
/// weights[i] is the success rate of the worker at rank i+1.
struct WorkerWeights {
  std::vector<double> weights;

  std::size_t size() const { return weights.size(); }
  double operator[](std::size_t i) const { return weights[i]; }

  WorkerWeights prefix(std::size_t n) const {
    if (n > weights.size()) throw std::invalid_argument("prefix longer than weights");
    return {std::vector<double>(weights.begin(), weights.begin() + n)};
  }
};

/// P(W >= rank) for integer rank >= 0.
inline double survival(const CapacityDistribution& dist, std::uint64_t rank) {
  validate(dist);
  if (rank == 0) return 1.0;
  if (const auto* d = std::get_if<DeterministicCapacity>(&dist)) {
    return rank <= static_cast<std::uint64_t>(d->c) ? 1.0 : 0.0;
  }
  if (const auto* ln = std::get_if<LognormalCapacity>(&dist)) {
    const double z = (std::log(static_cast<double>(rank)) - ln->mu_log) / ln->sigma;
    return std::clamp(1.0 - standard_normal_cdf(z), 0.0, 1.0);
  }
  const auto& e = std::get<EmpiricalCapacity>(dist);
  // Accumulate tail and total in the same backward order so tail <= total
  // holds exactly and the ratio never exceeds 1.
  double total = 0.0;
  double tail = 0.0;
  for (std::size_t k = e.counts.size(); k-- > 0;) {
    total += e.counts[k];
    if (k >= rank) tail = total;
  }
  return tail / total;
}

/// w_i = P(W >= i) for i = 1..horizon.
inline WorkerWeights survival_weights(const CapacityModel& model) {
  validate(model);
  std::vector<double> w(model.horizon, 0.0);
  if (const auto* e = std::get_if<EmpiricalCapacity>(&model.dist)) {
    // One tail-cumulative pass; dividing every tail sum by the full sum of
    // the same pass keeps the sequence exactly monotone and within [0, 1].
    std::vector<double> tail_sums(e->counts.size() + 1, 0.0);
    double tail = 0.0;
    for (std::size_t k = e->counts.size(); k-- > 0;) {
      tail += e->counts[k];
      tail_sums[k] = tail;
    }
    const double total = tail;
    for (std::size_t i = 0; i < model.horizon; ++i) {
      const std::size_t rank = i + 1;
      w[i] = rank < tail_sums.size() ? tail_sums[rank] / total : 0.0;
    }
  } else {
    for (std::size_t i = 0; i < model.horizon; ++i) {
      w[i] = survival(model.dist, i + 1);
    }
  }
  // Guard against sub-ulp rounding wiggles in the CDF evaluation.
  for (std::size_t i = 1; i < w.size(); ++i) w[i] = std::min(w[i], w[i - 1]);
  return {std::move(w)};
}

/// E[min(W, horizon)] via the survival identity E[min(W,N)] = sum_i P(W >= i).
inline double expected_capacity(const CapacityModel& model) {
  const WorkerWeights w = survival_weights(model);
  double total = 0.0;
  for (double x : w.weights) total += x;
  return total;
}

inline CapacityDistribution capacity_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  CapacityDistribution dist;
  if (kind == "deterministic") {
    dist = DeterministicCapacity{j.at("c").get<std::int64_t>()};
  } else if (kind == "lognormal") {
    dist = LognormalCapacity{j.at("mu_log").get<double>(), j.at("sigma").get<double>()};
  } else if (kind == "empirical") {
    dist = EmpiricalCapacity{j.at("counts").get<std::vector<double>>()};
  } else {
    throw std::invalid_argument("unknown capacity kind: " + kind);
  }
  validate(dist);
  return dist;
}

inline nlohmann::json capacity_to_json(const CapacityDistribution& dist) {
  nlohmann::json j;
  if (const auto* d = std::get_if<DeterministicCapacity>(&dist)) {
    j["kind"] = "deterministic";
    j["c"] = d->c;
  } else if (const auto* ln = std::get_if<LognormalCapacity>(&dist)) {
    j["kind"] = "lognormal";
    j["mu_log"] = ln->mu_log;
    j["sigma"] = ln->sigma;
  } else {
    j["kind"] = "empirical";
    j["counts"] = std::get<EmpiricalCapacity>(dist).counts;
  }
  return j;
}

}  // namespace caprank
