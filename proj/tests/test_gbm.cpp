#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <span>
#include <vector>

#include "caprank/gbm.hpp"
#include "caprank/objectives.hpp"
#include "caprank/random.hpp"

using namespace caprank;

namespace {

FeatureMatrix matrix_from(const std::vector<std::vector<double>>& rows) {
  FeatureMatrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) m.at(r, c) = rows[r][c];
  }
  return m;
}

double accuracy(const BoostedModel& model, const FeatureMatrix& x,
                const std::vector<int>& y) {
  const std::vector<double> p = model.predict_proba(x);
  double correct = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    correct += (p[i] >= 0.5 ? 1 : 0) == y[i] ? 1.0 : 0.0;
  }
  return correct / static_cast<double>(y.size());
}

}  // namespace

TEST_CASE("second-order gain formula", "[gbm]") {
  CHECK(second_order_gain(0.0, 1.0, 0.0, 1.0, 1.0) == 0.0);
  CHECK(second_order_gain(2.0, 1.0, -2.0, 1.0, 1.0) > 0.0);

  // brute-force oracle: difference of the optimal leaf objectives
  detail::Rng rng(3);
  const auto leaf_objective = [](double g, double h, double l2) {
    return -0.5 * g * g / (h + l2);
  };
  for (int k = 0; k < 100; ++k) {
    const double gl = rng.normal() * 3;
    const double gr = rng.normal() * 3;
    const double hl = rng.uniform() * 4;
    const double hr = rng.uniform() * 4;
    const double l2 = 0.5 + rng.uniform();
    const double expected = leaf_objective(gl + gr, hl + hr, l2) -
                            leaf_objective(gl, hl, l2) - leaf_objective(gr, hr, l2);
    CHECK(second_order_gain(gl, hl, gr, hr, l2) == Catch::Approx(expected).margin(1e-12));
  }
}

TEST_CASE("constant labels collapse to the base rate", "[gbm]") {
  detail::Rng rng(5);
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  for (int i = 0; i < 100; ++i) {
    rows.push_back({rng.normal(), rng.normal()});
    labels.push_back(1);
  }
  const FeatureMatrix x = matrix_from(rows);
  TrainConfig cfg;
  cfg.n_rounds = 20;
  const BoostedModel model =
      fit(x, make_objective(ObjectiveKind::kCrossEntropy, labels, {}, {}, {}), cfg);
  const std::vector<double> p = model.predict_proba(x);
  for (double v : p) CHECK(v > 0.999);
  for (const Tree& t : model.trees) CHECK(t.n_leaves() == 1);
}

TEST_CASE("perfectly separable data reaches training accuracy 1", "[gbm]") {
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  for (int i = 0; i < 60; ++i) {
    const double x = i < 30 ? -1.0 - 0.01 * i : 1.0 + 0.01 * i;
    rows.push_back({x});
    labels.push_back(i < 30 ? 0 : 1);
  }
  const FeatureMatrix x = matrix_from(rows);
  TrainConfig cfg;
  cfg.n_rounds = 10;
  cfg.max_depth = 2;
  const BoostedModel model =
      fit(x, make_objective(ObjectiveKind::kCrossEntropy, labels, {}, {}, {}), cfg);
  CHECK(accuracy(model, x, labels) == 1.0);
}

TEST_CASE("XOR needs depth two", "[gbm]") {
  detail::Rng rng(17);
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  for (int i = 0; i < 400; ++i) {
    const double a = rng.uniform() < 0.5 ? 0.0 : 1.0;
    const double b = rng.uniform() < 0.5 ? 0.0 : 1.0;
    rows.push_back({a + 0.05 * rng.normal(), b + 0.05 * rng.normal()});
    labels.push_back(static_cast<int>(a) ^ static_cast<int>(b));
  }
  const FeatureMatrix x = matrix_from(rows);

  TrainConfig deep;
  deep.n_rounds = 50;
  deep.max_depth = 2;
  const BoostedModel interaction =
      fit(x, make_objective(ObjectiveKind::kCrossEntropy, labels, {}, {}, {}), deep);
  CHECK(accuracy(interaction, x, labels) > 0.95);

  TrainConfig shallow = deep;
  shallow.max_depth = 1;
  const BoostedModel stumps =
      fit(x, make_objective(ObjectiveKind::kCrossEntropy, labels, {}, {}, {}), shallow);
  CHECK(accuracy(stumps, x, labels) <= 0.75);
}

TEST_CASE("empty ensemble predicts the base score", "[gbm]") {
  BoostedModel model;
  model.base_score = 0.37;
  model.n_features = 2;
  const FeatureMatrix x = matrix_from({{1.0, -5.0}, {0.0, 100.0}});
  const std::vector<double> s = model.predict(x);
  CHECK(s == std::vector<double>{0.37, 0.37});
}

TEST_CASE("single split predicts a two-valued step function", "[gbm]") {
  Tree tree;
  tree.nodes.resize(3);
  tree.nodes[0] = TreeNode{0, 1.5, 1, 2, 0.0, false};
  tree.nodes[1] = TreeNode{-1, 0.0, -1, -1, -2.0, true};
  tree.nodes[2] = TreeNode{-1, 0.0, -1, -1, 3.0, true};
  BoostedModel model;
  model.base_score = 1.0;
  model.n_features = 1;
  model.trees.push_back(tree);
  CHECK(model.predict_row(std::vector<double>{1.0}) == -1.0);  // 1.0 + (-2.0)
  CHECK(model.predict_row(std::vector<double>{1.49}) == -1.0);
  CHECK(model.predict_row(std::vector<double>{1.5}) == 4.0);  // 1.0 + 3.0
  CHECK(model.predict_row(std::vector<double>{99.0}) == 4.0);
}

TEST_CASE("predicted probabilities stay inside (0,1)", "[gbm]") {
  detail::Rng rng(23);
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  for (int i = 0; i < 200; ++i) {
    rows.push_back({rng.normal() * 10});
    labels.push_back(rows.back()[0] > 0 ? 1 : 0);
  }
  const FeatureMatrix x = matrix_from(rows);
  TrainConfig cfg;
  cfg.n_rounds = 80;
  const BoostedModel model =
      fit(x, make_objective(ObjectiveKind::kCrossEntropy, labels, {}, {}, {}), cfg);
  for (double p : model.predict_proba(x)) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
}

TEST_CASE("dimension mismatch is rejected", "[gbm]") {
  BoostedModel model;
  model.n_features = 3;
  CHECK_THROWS_AS(model.predict(FeatureMatrix(2, 2)), std::invalid_argument);
}

namespace {

struct RandomBatch {
  FeatureMatrix x;
  std::vector<int> labels;
  std::vector<CostMatrix> costs;
};

RandomBatch random_batch(std::uint64_t seed, std::size_t n, std::size_t d) {
  detail::Rng rng(seed);
  RandomBatch out;
  out.x = FeatureMatrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      out.x.at(i, j) = rng.normal();
      s += out.x.at(i, j);
    }
    out.labels.push_back(sigmoid(s) > rng.uniform() ? 1 : 0);
    const double amount = rng.lognormal(2.0, 1.0);
    out.costs.push_back(build_cost_matrix(CostSchema::kChurn, {.amount = amount}));
  }
  return out;
}

}  // namespace

TEST_CASE("full-batch training loss is nonincreasing", "[gbm]") {
  const RandomBatch batch = random_batch(29, 500, 4);
  TrainConfig cfg;
  cfg.n_rounds = 60;

  for (ObjectiveKind kind : {ObjectiveKind::kCrossEntropy, ObjectiveKind::kExpectedCost}) {
    std::vector<double> history;
    fit(batch.x, make_objective(kind, batch.labels, batch.costs, {}, {}), cfg, &history);
    REQUIRE(history.size() == 61);
    for (std::size_t r = 1; r < history.size(); ++r) {
      CHECK(history[r] <= history[r - 1] + 1e-9);
    }
  }
}

TEST_CASE("training is reproducible for a fixed seed", "[gbm]") {
  const RandomBatch batch = random_batch(31, 300, 3);
  TrainConfig cfg;
  cfg.n_rounds = 25;
  cfg.subsample = 0.8;
  cfg.seed = 99;
  const auto objective =
      make_objective(ObjectiveKind::kCrossEntropy, batch.labels, {}, {}, {});
  const BoostedModel a = fit(batch.x, objective, cfg);
  const BoostedModel b = fit(batch.x, objective, cfg);
  CHECK(a.to_json() == b.to_json());
}

TEST_CASE("histogram splits equal exact splits on coarse data", "[gbm]") {
  // every feature takes at most 10 distinct values < histogram_bins
  detail::Rng rng(37);
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  for (int i = 0; i < 400; ++i) {
    rows.push_back({static_cast<double>(rng.index(10)), static_cast<double>(rng.index(7))});
    labels.push_back(rows.back()[0] + rows.back()[1] > 7 ? 1 : 0);
  }
  const FeatureMatrix x = matrix_from(rows);
  const auto objective = make_objective(ObjectiveKind::kCrossEntropy, labels, {}, {}, {});

  TrainConfig hist_cfg;
  hist_cfg.n_rounds = 15;
  TrainConfig exact_cfg = hist_cfg;
  exact_cfg.exact_splits = true;

  const BoostedModel hist_model = fit(x, objective, hist_cfg);
  const BoostedModel exact_model = fit(x, objective, exact_cfg);
  CHECK(hist_model.to_json()["trees"] == exact_model.to_json()["trees"]);
}

namespace {

// Objective that reports NaN gradients from a chosen round onward.
struct PoisonObjective {
  int poison_round;
  mutable int calls = 0;
  ObjectiveKind kind() const { return ObjectiveKind::kCrossEntropy; }
  double initial_score() const { return 0.0; }
  double evaluate(std::span<const double>) const { return 0.0; }
  void grad_hess(std::span<const double> scores, std::span<double> g,
                 std::span<double> h) const {
    ++calls;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      g[i] = calls >= poison_round ? std::nan("") : 0.1;
      h[i] = 0.25;
    }
  }
};

}  // namespace

TEST_CASE("non-finite gradients abort with the round reported", "[gbm]") {
  const FeatureMatrix x = matrix_from({{0.0}, {1.0}, {2.0}, {3.0}});
  TrainConfig cfg;
  cfg.n_rounds = 10;
  CHECK_THROWS_WITH(fit(x, PoisonObjective{3}, cfg),
                    Catch::Matchers::ContainsSubstring("round 3"));
}

TEST_CASE("model JSON round trip preserves predictions", "[gbm]") {
  const RandomBatch batch = random_batch(41, 250, 3);
  TrainConfig cfg;
  cfg.n_rounds = 20;
  const BoostedModel model = fit(
      batch.x, make_objective(ObjectiveKind::kExpectedCost, batch.labels, batch.costs, {}, {}),
      cfg);
  const BoostedModel reloaded = BoostedModel::from_json(model.to_json());
  CHECK(reloaded.predict(batch.x) == model.predict(batch.x));
  CHECK(reloaded.objective == ObjectiveKind::kExpectedCost);

  nlohmann::json bad = model.to_json();
  bad["format"] = "something-else";
  CHECK_THROWS_AS(BoostedModel::from_json(bad), std::runtime_error);
}

TEST_CASE("train config validation", "[gbm]") {
  TrainConfig cfg;
  cfg.n_rounds = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.learning_rate = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.histogram_bins = 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
