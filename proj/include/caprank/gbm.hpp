#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "caprank/matrix.hpp"
#include "caprank/random.hpp"

namespace caprank {

enum class ObjectiveKind { kCrossEntropy, kExpectedCost, kLambdaAccuracy, kLambdaCost };

inline std::string to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::kCrossEntropy: return "ce";
    case ObjectiveKind::kExpectedCost: return "aec";
    case ObjectiveKind::kLambdaAccuracy: return "lambda_accuracy";
    case ObjectiveKind::kLambdaCost: return "lambda_cost";
  }
  throw std::logic_error("unreachable");
}

inline ObjectiveKind objective_kind_from_string(const std::string& s) {
  if (s == "ce") return ObjectiveKind::kCrossEntropy;
  if (s == "aec") return ObjectiveKind::kExpectedCost;
  if (s == "lambda_accuracy") return ObjectiveKind::kLambdaAccuracy;
  if (s == "lambda_cost") return ObjectiveKind::kLambdaCost;
  throw std::invalid_argument("unknown objective kind: " + s);
}

/// Classification objectives score on the logit scale and support
/// predict_proba; ranking objectives produce raw ordering scores.
inline bool is_classification(ObjectiveKind k) {
  return k == ObjectiveKind::kCrossEntropy || k == ObjectiveKind::kExpectedCost;
}

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Per-instance hessian floor; keeps leaf denominators away from zero when
// sigmoids saturate.
inline constexpr double kHessianFloor = 1e-6;
// Minimum split gain; nodes below this stay leaves.
inline constexpr double kMinSplitGain = 1e-12;

struct TrainConfig {
  int n_rounds = 200;
  int max_depth = 4;
  double learning_rate = 0.1;
  double min_child_hessian = 1e-3;
  double l2_leaf_penalty = 1.0;
  int histogram_bins = 64;
  double subsample = 1.0;
  std::uint64_t seed = 0;
  bool exact_splits = false;  // enumerate every distinct-value midpoint

  void validate() const {
    if (n_rounds < 1) throw std::invalid_argument("n_rounds must be >= 1");
    if (max_depth < 1) throw std::invalid_argument("max_depth must be >= 1");
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) {
      throw std::invalid_argument("learning_rate must be in (0, 1]");
    }
    if (histogram_bins < 2) throw std::invalid_argument("histogram_bins must be >= 2");
    if (!(subsample > 0.0 && subsample <= 1.0)) {
      throw std::invalid_argument("subsample must be in (0, 1]");
    }
    if (min_child_hessian < 0.0) throw std::invalid_argument("min_child_hessian must be >= 0");
    if (l2_leaf_penalty < 0.0) throw std::invalid_argument("l2_leaf_penalty must be >= 0");
  }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"n_rounds", c.n_rounds},
          {"max_depth", c.max_depth},
          {"learning_rate", c.learning_rate},
          {"min_child_hessian", c.min_child_hessian},
          {"l2_leaf_penalty", c.l2_leaf_penalty},
          {"histogram_bins", c.histogram_bins},
          {"subsample", c.subsample},
          {"seed", c.seed},
          {"exact_splits", c.exact_splits}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("n_rounds")) c.n_rounds = j["n_rounds"].get<int>();
  if (j.contains("max_depth")) c.max_depth = j["max_depth"].get<int>();
  if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("min_child_hessian")) c.min_child_hessian = j["min_child_hessian"].get<double>();
  if (j.contains("l2_leaf_penalty")) c.l2_leaf_penalty = j["l2_leaf_penalty"].get<double>();
  if (j.contains("histogram_bins")) c.histogram_bins = j["histogram_bins"].get<int>();
  if (j.contains("subsample")) c.subsample = j["subsample"].get<double>();
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("exact_splits")) c.exact_splits = j["exact_splits"].get<bool>();
  c.validate();
  return c;
}

struct TreeNode {
  std::int32_t split_feature = -1;
  double split_threshold = 0.0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  double leaf_value = 0.0;
  bool is_leaf = true;
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict_row(std::span<const double> x) const {
    std::int32_t idx = 0;
    while (!nodes[idx].is_leaf) {
      const TreeNode& n = nodes[idx];
      idx = x[n.split_feature] < n.split_threshold ? n.left : n.right;
    }
    return nodes[idx].leaf_value;
  }

  std::size_t n_leaves() const {
    std::size_t count = 0;
    for (const TreeNode& n : nodes) count += n.is_leaf ? 1 : 0;
    return count;
  }
};

/// Newton split gain: improvement of the regularized leaf objective when a
/// node with totals (G, H) is split into (G_l, H_l) and (G_r, H_r).
inline double second_order_gain(double g_left, double h_left, double g_right,
                                double h_right, double l2) {
  const double g_total = g_left + g_right;
  const double h_total = h_left + h_right;
  return 0.5 * (g_left * g_left / (h_left + l2) + g_right * g_right / (h_right + l2) -
                g_total * g_total / (h_total + l2));
}

struct BoostedModel {
  std::vector<Tree> trees;
  double base_score = 0.0;
  double learning_rate = 0.1;
  ObjectiveKind objective = ObjectiveKind::kCrossEntropy;
  std::size_t n_features = 0;
  TrainConfig config;

  double predict_row(std::span<const double> x) const {
    double s = base_score;
    for (const Tree& t : trees) s += t.predict_row(x);
    return s;
  }

  std::vector<double> predict(const FeatureMatrix& m) const {
    if (m.n_cols != n_features) {
      throw std::invalid_argument("feature dimension mismatch: model expects " +
                                  std::to_string(n_features) + ", got " +
                                  std::to_string(m.n_cols));
    }
    std::vector<double> s(m.n_rows);
    for (std::size_t r = 0; r < m.n_rows; ++r) s[r] = predict_row(m.row(r));
    return s;
  }

  /// sigmoid(score); meaningful for classification-tagged models.
  std::vector<double> predict_proba(const FeatureMatrix& m) const {
    std::vector<double> p = predict(m);
    for (double& x : p) x = sigmoid(x);
    return p;
  }

  nlohmann::json to_json() const {
    nlohmann::json jtrees = nlohmann::json::array();
    for (const Tree& t : trees) {
      nlohmann::json jnodes = nlohmann::json::array();
      for (const TreeNode& n : t.nodes) {
        if (n.is_leaf) {
          jnodes.push_back({n.leaf_value});
        } else {
          jnodes.push_back({n.split_feature, n.split_threshold, n.left, n.right});
        }
      }
      jtrees.push_back(std::move(jnodes));
    }
    return {{"format", "capacity-rank-model"},
            {"version", 1},
            {"objective", to_string(objective)},
            {"base_score", base_score},
            {"learning_rate", learning_rate},
            {"n_features", n_features},
            {"config", train_config_to_json(config)},
            {"trees", std::move(jtrees)}};
  }

  static BoostedModel from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "capacity-rank-model") {
      throw std::runtime_error("not a capacity-rank model document");
    }
    if (j.at("version").get<int>() != 1) {
      throw std::runtime_error("unsupported model version");
    }
    BoostedModel m;
    m.objective = objective_kind_from_string(j.at("objective").get<std::string>());
    m.base_score = j.at("base_score").get<double>();
    m.learning_rate = j.at("learning_rate").get<double>();
    m.n_features = j.at("n_features").get<std::size_t>();
    if (j.contains("config")) m.config = train_config_from_json(j["config"]);
    for (const auto& jt : j.at("trees")) {
      Tree t;
      for (const auto& jn : jt) {
        TreeNode n;
        if (jn.size() == 1) {
          n.leaf_value = jn[0].get<double>();
        } else {
          n.is_leaf = false;
          n.split_feature = jn[0].get<std::int32_t>();
          n.split_threshold = jn[1].get<double>();
          n.left = jn[2].get<std::int32_t>();
          n.right = jn[3].get<std::int32_t>();
          if (n.split_feature < 0 ||
              static_cast<std::size_t>(n.split_feature) >= m.n_features) {
            throw std::runtime_error("model references feature out of range");
          }
        }
        t.nodes.push_back(n);
      }
      m.trees.push_back(std::move(t));
    }
    return m;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write model file: " + path);
    out << to_json().dump() << '\n';
  }

  static BoostedModel load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open model file: " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }
};

namespace detail {

struct BinnedFeatures {
  // thresholds[f] are ascending split candidates; bins[f][row] counts the
  // thresholds <= value, so "value < thresholds[j]" is "bin <= j".
  std::vector<std::vector<double>> thresholds;
  std::vector<std::vector<std::uint32_t>> bins;
};

inline BinnedFeatures bin_features(const FeatureMatrix& data, int max_bins, bool exact) {
  const std::size_t n = data.n_rows;
  const std::size_t d = data.n_cols;
  BinnedFeatures out;
  out.thresholds.resize(d);
  out.bins.resize(d);
  std::vector<double> column(n);
  for (std::size_t f = 0; f < d; ++f) {
    for (std::size_t r = 0; r < n; ++r) column[r] = data.at(r, f);
    std::vector<double> sorted = column;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> distinct = sorted;
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    std::vector<double>& thr = out.thresholds[f];
    if (exact || distinct.size() <= static_cast<std::size_t>(max_bins)) {
      for (std::size_t k = 0; k + 1 < distinct.size(); ++k) {
        thr.push_back(distinct[k] + (distinct[k + 1] - distinct[k]) / 2.0);
      }
    } else {
      // Quantile-spaced candidate cuts over the full (non-distinct) column.
      for (int k = 1; k < max_bins; ++k) {
        const std::size_t pos = static_cast<std::size_t>(
            static_cast<std::uint64_t>(k) * n / static_cast<std::uint64_t>(max_bins));
        if (pos == 0 || pos >= n) continue;
        const double lo = sorted[pos - 1];
        const double hi = sorted[pos];
        if (lo < hi) thr.push_back(lo + (hi - lo) / 2.0);
      }
      thr.erase(std::unique(thr.begin(), thr.end()), thr.end());
    }

    std::vector<std::uint32_t>& b = out.bins[f];
    b.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
      b[r] = static_cast<std::uint32_t>(
          std::upper_bound(thr.begin(), thr.end(), column[r]) - thr.begin());
    }
  }
  return out;
}

struct SplitChoice {
  double gain = 0.0;
  std::int32_t feature = -1;
  std::uint32_t threshold_index = 0;
  bool found = false;
};

// Grows one depth-limited tree on the sampled rows. Single-threaded and
// fully deterministic: features and thresholds are scanned in ascending
// order and only strictly larger gains replace the incumbent.
inline Tree build_tree(const BinnedFeatures& binned, std::span<const double> grad,
                       std::span<const double> hess, std::vector<std::uint32_t>& rows,
                       const TrainConfig& cfg) {
  Tree tree;
  struct Pending {
    std::int32_t node;
    std::size_t begin, end;
    int depth;
  };
  std::deque<Pending> queue;
  tree.nodes.push_back(TreeNode{});
  queue.push_back({0, 0, rows.size(), 0});

  const std::size_t d = binned.thresholds.size();
  std::vector<double> hist_g, hist_h;
  std::vector<std::uint32_t> scratch;

  while (!queue.empty()) {
    const Pending task = queue.front();
    queue.pop_front();

    double g_total = 0.0, h_total = 0.0;
    for (std::size_t k = task.begin; k < task.end; ++k) {
      g_total += grad[rows[k]];
      h_total += hess[rows[k]];
    }

    auto make_leaf = [&]() {
      TreeNode& n = tree.nodes[task.node];
      n.is_leaf = true;
      n.leaf_value =
          cfg.learning_rate * (-g_total / (h_total + cfg.l2_leaf_penalty));
    };

    if (task.depth >= cfg.max_depth || task.end - task.begin < 2) {
      make_leaf();
      continue;
    }

    SplitChoice best;
    for (std::size_t f = 0; f < d; ++f) {
      const std::vector<double>& thr = binned.thresholds[f];
      if (thr.empty()) continue;
      hist_g.assign(thr.size() + 1, 0.0);
      hist_h.assign(thr.size() + 1, 0.0);
      const std::vector<std::uint32_t>& bins = binned.bins[f];
      for (std::size_t k = task.begin; k < task.end; ++k) {
        const std::uint32_t r = rows[k];
        hist_g[bins[r]] += grad[r];
        hist_h[bins[r]] += hess[r];
      }
      double g_left = 0.0, h_left = 0.0;
      for (std::size_t j = 0; j + 1 < hist_g.size(); ++j) {
        g_left += hist_g[j];
        h_left += hist_h[j];
        const double h_right = h_total - h_left;
        if (h_left < cfg.min_child_hessian || h_right < cfg.min_child_hessian) continue;
        const double g_right = g_total - g_left;
        const double gain =
            second_order_gain(g_left, h_left, g_right, h_right, cfg.l2_leaf_penalty);
        if (gain > best.gain) {
          best.gain = gain;
          best.feature = static_cast<std::int32_t>(f);
          best.threshold_index = static_cast<std::uint32_t>(j);
          best.found = true;
        }
      }
    }

    if (!best.found || best.gain <= kMinSplitGain) {
      make_leaf();
      continue;
    }

    // Stable partition keeps row order inside both children, so later
    // histogram sums accumulate in a reproducible order.
    const std::vector<std::uint32_t>& bins = binned.bins[best.feature];
    scratch.clear();
    std::size_t mid = task.begin;
    for (std::size_t k = task.begin; k < task.end; ++k) {
      const std::uint32_t r = rows[k];
      if (bins[r] <= best.threshold_index) {
        rows[mid++] = r;
      } else {
        scratch.push_back(r);
      }
    }
    std::copy(scratch.begin(), scratch.end(), rows.begin() + mid);

    const std::int32_t left_id = static_cast<std::int32_t>(tree.nodes.size());
    const std::int32_t right_id = left_id + 1;
    TreeNode& node = tree.nodes[task.node];
    node.is_leaf = false;
    node.split_feature = best.feature;
    node.split_threshold = binned.thresholds[best.feature][best.threshold_index];
    node.left = left_id;
    node.right = right_id;
    tree.nodes.push_back(TreeNode{});
    tree.nodes.push_back(TreeNode{});
    queue.push_back({left_id, task.begin, mid, task.depth + 1});
    queue.push_back({right_id, mid, task.end, task.depth + 1});
  }
  return tree;
}

}  // namespace detail

/// Sequential Newton boosting with histogram split finding. The objective
/// supplies per-instance (gradient, hessian) given the current scores; see
/// objectives.hpp for the implementations. When loss_history is given it
/// receives the objective value before training and after every round.
template <class Objective>
BoostedModel fit(const FeatureMatrix& data, const Objective& objective,
                 const TrainConfig& config, std::vector<double>* loss_history = nullptr) {
  config.validate();
  const std::size_t n = data.n_rows;
  if (n == 0) throw std::invalid_argument("empty training data");

  BoostedModel model;
  model.objective = objective.kind();
  model.learning_rate = config.learning_rate;
  model.n_features = data.n_cols;
  model.base_score = objective.initial_score();
  model.config = config;

  const detail::BinnedFeatures binned =
      detail::bin_features(data, config.histogram_bins, config.exact_splits);

  std::vector<double> scores(n, model.base_score);
  std::vector<double> grad(n), hess(n);
  std::vector<std::uint32_t> rows;
  rows.reserve(n);

  if (loss_history) {
    loss_history->clear();
    loss_history->push_back(objective.evaluate(scores));
  }

  for (int round = 0; round < config.n_rounds; ++round) {
    objective.grad_hess(scores, grad, hess);
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(grad[i]) || !std::isfinite(hess[i])) {
        throw std::runtime_error("non-finite gradient at boosting round " +
                                 std::to_string(round + 1) + ", instance " +
                                 std::to_string(i));
      }
      hess[i] = std::max(hess[i], kHessianFloor);
    }

    rows.clear();
    if (config.subsample < 1.0) {
      detail::Rng rng(config.seed + 0x9e3779b97f4a7c15ull * (round + 1));
      for (std::size_t i = 0; i < n; ++i) {
        if (rng.uniform() < config.subsample) rows.push_back(static_cast<std::uint32_t>(i));
      }
      if (rows.empty()) rows.push_back(0);
    } else {
      for (std::size_t i = 0; i < n; ++i) rows.push_back(static_cast<std::uint32_t>(i));
    }

    Tree tree = detail::build_tree(binned, grad, hess, rows, config);
    for (std::size_t i = 0; i < n; ++i) scores[i] += tree.predict_row(data.row(i));
    model.trees.push_back(std::move(tree));

    if (loss_history) loss_history->push_back(objective.evaluate(scores));
  }
  return model;
}

}  // namespace caprank
