#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "caprank/assignment.hpp"
#include "caprank/objectives.hpp"
#include "caprank/random.hpp"

using namespace caprank;

namespace {

WorkerWeights weights_of(std::vector<double> w) { return {std::move(w)}; }

std::vector<double> random_monotone_weights(detail::Rng& rng, std::size_t n) {
  std::vector<double> w(n);
  for (double& x : w) x = rng.uniform();
  std::sort(w.begin(), w.end(), std::greater<double>());
  return w;
}

// Model with no trees: predicts base_score everywhere.
BoostedModel constant_model(ObjectiveKind kind) {
  BoostedModel model;
  model.n_features = 1;
  model.base_score = 0.0;
  model.objective = kind;
  return model;
}

// Single tree mapping three regions of the one feature to fixed scores.
BoostedModel three_region_model(ObjectiveKind kind, double low, double mid, double high) {
  BoostedModel model = constant_model(kind);
  Tree tree;
  tree.nodes.resize(5);
  tree.nodes[0] = TreeNode{0, -0.5, 1, 2, 0.0, false};
  tree.nodes[1] = TreeNode{-1, 0.0, -1, -1, low, true};
  tree.nodes[2] = TreeNode{0, 1.0, 3, 4, 0.0, false};
  tree.nodes[3] = TreeNode{-1, 0.0, -1, -1, mid, true};
  tree.nodes[4] = TreeNode{-1, 0.0, -1, -1, high, true};
  model.trees.push_back(tree);
  return model;
}

}  // namespace

TEST_CASE("probability ranking sorts by predicted probability", "[assignment]") {
  // model scores are the logits of (0.2, 0.5, 0.9) per feature region
  const double l20 = std::log(0.2 / 0.8);
  const double l90 = std::log(0.9 / 0.1);
  BoostedModel model = three_region_model(ObjectiveKind::kCrossEntropy, l20, 0.0, l90);
  TaskSet tasks;
  tasks.feature_names = {"s"};
  for (double x : {-1.0, 2.0, 0.0}) {  // regions: p = 0.2, 0.9, 0.5
    Task t;
    t.features = {x};
    tasks.tasks.push_back(t);
  }
  const std::vector<double> keys = ranking_keys(model, tasks, RankMode::kProbability);
  CHECK(keys[0] == Catch::Approx(0.2).margin(1e-12));
  CHECK(keys[1] == Catch::Approx(0.9).margin(1e-12));
  CHECK(keys[2] == Catch::Approx(0.5).margin(1e-12));
  const AssignmentPlan plan =
      rank_by_predicted_reward(model, tasks, RankMode::kProbability);
  CHECK(plan.order == std::vector<std::size_t>{1, 2, 0});
}

TEST_CASE("expected-reward ties keep the original index order", "[assignment]") {
  BoostedModel model = constant_model(ObjectiveKind::kExpectedCost);
  TaskSet tasks;
  tasks.feature_names = {"s"};
  // p = 0.5 for both; payoffs (10, 0) and (100, -90) both give expected 5
  Task a;
  a.features = {0.0};
  a.cost = CostMatrix{0.0, 10.0, 0.0, 0.0};
  Task b;
  b.features = {0.0};
  b.cost = CostMatrix{0.0, 100.0, 90.0, 0.0};
  tasks.tasks = {a, b};

  const std::vector<double> keys =
      ranking_keys(model, tasks, RankMode::kExpectedReward);
  CHECK(keys[0] == Catch::Approx(5.0).margin(1e-12));
  CHECK(keys[1] == Catch::Approx(5.0).margin(1e-12));
  const AssignmentPlan plan =
      rank_by_predicted_reward(model, tasks, RankMode::kExpectedReward);
  CHECK(plan.order == std::vector<std::size_t>{0, 1});
}

TEST_CASE("sorting predicted rewards attains the assignment optimum", "[assignment]") {
  detail::Rng rng(43);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 7;
    std::vector<double> predicted(n);
    for (double& r : predicted) r = rng.normal() * 5;
    const WorkerWeights w = weights_of(random_monotone_weights(rng, n));

    const std::vector<std::size_t> order = descending_order(predicted);
    const double sorted_profit = expected_profit(order, predicted, w);
    const auto [best_order, best_profit] = brute_force_optimal(predicted, w);
    CHECK(sorted_profit == Catch::Approx(best_profit).margin(1e-12));
  }
}

TEST_CASE("expected profit hand examples", "[assignment]") {
  const std::vector<std::size_t> identity{0, 1, 2, 3};
  const std::vector<double> rewards{4.0, -1.0, 9.0, 9.0};
  CHECK(expected_profit(identity, rewards, weights_of({1, 1, 0, 0})) == 3.0);
  CHECK(expected_profit(identity, rewards, weights_of({0, 0, 0, 0})) == 0.0);
  CHECK_THROWS_AS(expected_profit(identity, rewards, weights_of({1, 1})),
                  std::invalid_argument);
}

TEST_CASE("expected profit equals the DCG of the same order", "[assignment]") {
  detail::Rng rng(47);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 6;
    std::vector<double> rewards(n), scores(n);
    for (std::size_t i = 0; i < n; ++i) {
      rewards[i] = rng.normal() * 4;
      scores[i] = rng.normal();
    }
    const WorkerWeights w = weights_of(random_monotone_weights(rng, n));
    const std::vector<std::size_t> order = descending_order(scores);
    CHECK(expected_profit(order, rewards, w) ==
          Catch::Approx(dcg(order, rewards, w)).margin(1e-12));
  }
}

TEST_CASE("brute force baseline cases", "[assignment]") {
  const auto [order1, profit1] = brute_force_optimal(std::vector<double>{4.5},
                                                     weights_of({0.25}));
  CHECK(order1 == std::vector<std::size_t>{0});
  CHECK(profit1 == 4.5 * 0.25);

  // distinct rewards with strictly monotone weights sort descending
  detail::Rng rng(53);
  std::vector<double> rewards{3.0, -2.0, 8.0, 0.5, 5.0};
  const WorkerWeights w = weights_of({1.0, 0.8, 0.5, 0.2, 0.05});
  const auto [order, profit] = brute_force_optimal(rewards, w);
  CHECK(order == descending_order(rewards));

  // constant weights make every permutation equally good
  const WorkerWeights flat = weights_of({0.5, 0.5, 0.5});
  const std::vector<double> r3{1.0, 2.0, 3.0};
  const auto [best_order, best] = brute_force_optimal(r3, flat);
  std::vector<std::size_t> perm{0, 1, 2};
  do {
    CHECK(expected_profit(perm, r3, flat) == Catch::Approx(best).margin(1e-12));
  } while (std::next_permutation(perm.begin(), perm.end()));

  CHECK_THROWS_AS(brute_force_optimal(std::vector<double>(11, 1.0),
                                      weights_of(std::vector<double>(11, 1.0))),
                  std::invalid_argument);
}

TEST_CASE("expected profit is linear in weights and rewards", "[assignment]") {
  detail::Rng rng(59);
  const std::size_t n = 8;
  std::vector<double> rewards(n);
  for (double& r : rewards) r = rng.normal() * 3;
  std::vector<double> wv = random_monotone_weights(rng, n);
  const std::vector<std::size_t> order = descending_order(rewards);

  const double base = expected_profit(order, rewards, weights_of(wv));

  std::vector<double> wv2 = wv;
  for (double& x : wv2) x *= 0.5;
  CHECK(expected_profit(order, rewards, weights_of(wv2)) ==
        Catch::Approx(0.5 * base).margin(1e-12));

  std::vector<double> rewards2 = rewards;
  for (double& r : rewards2) r *= 3.0;
  CHECK(expected_profit(order, rewards2, weights_of(wv)) ==
        Catch::Approx(3.0 * base).margin(1e-12));
}

TEST_CASE("raising a top-slot reward never lowers the sorted profit", "[assignment]") {
  detail::Rng rng(61);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 6;
    std::vector<double> rewards(n);
    for (double& r : rewards) r = rng.normal() * 2;
    const WorkerWeights w = weights_of(random_monotone_weights(rng, n));

    const double before =
        expected_profit(descending_order(rewards), rewards, w);
    std::vector<double> bumped = rewards;
    bumped[rng.index(n)] += rng.uniform() * 5.0;
    const double after = expected_profit(descending_order(bumped), bumped, w);
    CHECK(after >= before - 1e-12);
  }
}

TEST_CASE("plan CSV serialization", "[assignment]") {
  AssignmentPlan plan;
  plan.order = {2, 0, 1};
  const std::vector<double> scores{0.1, -0.5, 1.25};
  const std::vector<double> predicted{5.0, 1.0, 9.0};
  const WorkerWeights w = weights_of({1.0, 0.5, 0.25});
  std::ostringstream out;
  write_plan_csv(out, plan, scores, predicted, w);
  CHECK(out.str() ==
        "rank,task_id,score,predicted_reward,weight\n"
        "1,2,1.25,9,1\n"
        "2,0,0.1,5,0.5\n"
        "3,1,-0.5,1,0.25\n");

  // ranking models have no reward estimate: the column stays empty
  std::ostringstream raw;
  write_plan_csv(raw, plan, scores, {}, w);
  CHECK(raw.str() ==
        "rank,task_id,score,predicted_reward,weight\n"
        "1,2,1.25,,1\n"
        "2,0,0.1,,0.5\n"
        "3,1,-0.5,,0.25\n");
}
