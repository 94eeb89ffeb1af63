#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "caprank/capacity.hpp"
#include "caprank/random.hpp"

using namespace caprank;

TEST_CASE("deterministic capacity weights", "[capacity]") {
  const auto w = survival_weights(CapacityModel::deterministic(3, 5));
  REQUIRE(w.weights == std::vector<double>{1.0, 1.0, 1.0, 0.0, 0.0});
  CHECK(expected_capacity(CapacityModel::deterministic(3, 5)) == 3.0);
}

TEST_CASE("empirical capacity weights", "[capacity]") {
  // W = 2 with probability 0.5, W = 4 with probability 0.5.
  const std::vector<double> counts{0.0, 0.0, 1.0, 0.0, 1.0};
  const auto w = survival_weights(CapacityModel::empirical(counts, 4));
  REQUIRE(w.weights == std::vector<double>{1.0, 1.0, 0.5, 0.5});
  CHECK(expected_capacity(CapacityModel::empirical(counts, 4)) == 3.0);
}

TEST_CASE("empirical counts are normalized from raw logs", "[capacity]") {
  const std::vector<double> raw{0.0, 0.0, 6.0, 0.0, 6.0};
  const auto w = survival_weights(CapacityModel::empirical(raw, 4));
  CHECK(w.weights == std::vector<double>{1.0, 1.0, 0.5, 0.5});
}

TEST_CASE("lognormal weights match a high-precision normal CDF", "[capacity]") {
  const double mu = std::log(100.0);
  const auto w = survival_weights(CapacityModel::lognormal(mu, 1.0, 3));
  CHECK(w.weights[0] == Catch::Approx(0.99999793935660402828).margin(1e-12));
  CHECK(w.weights[1] == Catch::Approx(0.99995423690475011133).margin(1e-12));
  CHECK(w.weights[2] == Catch::Approx(0.99977302866521741047).margin(1e-12));
}

TEST_CASE("lognormal weights match Monte-Carlo sampling", "[capacity]") {
  const double mu = std::log(100.0);
  const auto w = survival_weights(CapacityModel::lognormal(mu, 1.0, 3));
  std::mt19937_64 gen(20240901);
  std::lognormal_distribution<double> dist(mu, 1.0);
  const std::size_t draws = 10'000'000;
  std::vector<std::size_t> hits(3, 0);
  for (std::size_t k = 0; k < draws; ++k) {
    const double x = dist(gen);
    for (std::size_t i = 0; i < 3; ++i) {
      if (x >= static_cast<double>(i + 1)) ++hits[i];
    }
  }
  for (std::size_t i = 0; i < 3; ++i) {
    const double estimate = static_cast<double>(hits[i]) / static_cast<double>(draws);
    CHECK(w.weights[i] == Catch::Approx(estimate).margin(1e-3));
  }
}

TEST_CASE("lognormal expected capacity matches Monte-Carlo", "[capacity]") {
  const double mu = std::log(100.0);
  const std::size_t horizon = 100'000;
  const double closed = expected_capacity(CapacityModel::lognormal(mu, 1.0, horizon));
  CHECK(closed == Catch::Approx(164.37212705119945464).margin(1e-9));

  std::mt19937_64 gen(77);
  std::lognormal_distribution<double> dist(mu, 1.0);
  double total = 0.0;
  const std::size_t draws = 1'000'000;
  for (std::size_t k = 0; k < draws; ++k) {
    total += std::min(std::floor(dist(gen)), static_cast<double>(horizon));
  }
  const double mc = total / static_cast<double>(draws);
  CHECK(closed == Catch::Approx(mc).epsilon(0.005));
}

TEST_CASE("weights are monotone nonincreasing within [0,1]", "[capacity]") {
  detail::Rng rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    CapacityModel model;
    model.horizon = 1 + rng.index(200);
    switch (trial % 3) {
      case 0:
        model.dist = DeterministicCapacity{static_cast<std::int64_t>(rng.index(300))};
        break;
      case 1:
        model.dist = LognormalCapacity{rng.uniform() * 8.0 - 1.0, 0.1 + rng.uniform() * 3.0};
        break;
      default: {
        std::vector<double> counts(1 + rng.index(40), 0.0);
        for (double& c : counts) c = rng.index(10) == 0 ? 0.0 : rng.uniform() * 5.0;
        counts[rng.index(counts.size())] += 1.0;  // keep some mass
        model.dist = EmpiricalCapacity{counts};
        break;
      }
    }
    const auto w = survival_weights(model);
    REQUIRE(w.size() == model.horizon);
    for (std::size_t i = 0; i < w.size(); ++i) {
      CHECK(w[i] >= 0.0);
      CHECK(w[i] <= 1.0);
      if (i > 0) CHECK(w[i] <= w[i - 1]);
    }
    double total = 0.0;
    for (double x : w.weights) total += x;
    CHECK(expected_capacity(model) == Catch::Approx(total).margin(1e-12));
  }
}

TEST_CASE("empirical weights agree with a brute-force pmf sum", "[capacity]") {
  // Dyadic counts (total a power of two) keep both routes exact.
  const std::vector<double> counts{4.0, 0.0, 6.0, 2.0, 16.0, 0.0, 4.0};
  const std::size_t horizon = 9;
  const auto w = survival_weights(CapacityModel::empirical(counts, horizon));

  double total = 0.0;
  for (double c : counts) total += c;
  for (std::size_t i = 1; i <= horizon; ++i) {
    double pmf_sum = 0.0;
    for (std::size_t k = i; k < counts.size(); ++k) pmf_sum += counts[k] / total;
    CHECK(w[i - 1] == pmf_sum);
  }
}

TEST_CASE("capacity validation", "[capacity]") {
  CHECK_THROWS_AS(survival_weights(CapacityModel::deterministic(3, 0)), std::invalid_argument);
  CHECK_THROWS_AS(survival_weights(CapacityModel::empirical({0.0, 0.0}, 3)),
                  std::invalid_argument);
  CHECK_THROWS_AS(survival_weights(CapacityModel::empirical({}, 3)), std::invalid_argument);
  CHECK_THROWS_AS(survival_weights(CapacityModel::lognormal(0.0, 0.0, 3)),
                  std::invalid_argument);
  CHECK_THROWS_AS(survival_weights(CapacityModel::lognormal(0.0, -1.0, 3)),
                  std::invalid_argument);
  CHECK_THROWS_AS(survival_weights(CapacityModel::deterministic(-1, 3)),
                  std::invalid_argument);
}

TEST_CASE("capacity JSON round trip", "[capacity]") {
  const auto check = [](const CapacityDistribution& dist) {
    const CapacityDistribution parsed = capacity_from_json(capacity_to_json(dist));
    const auto a = survival_weights(CapacityModel{dist, 20});
    const auto b = survival_weights(CapacityModel{parsed, 20});
    CHECK(a.weights == b.weights);
  };
  check(DeterministicCapacity{7});
  check(LognormalCapacity{std::log(100.0), 1.0});
  check(EmpiricalCapacity{{1.0, 2.0, 0.0, 3.0}});
  CHECK_THROWS_AS(capacity_from_json(nlohmann::json{{"kind", "weibull"}}),
                  std::invalid_argument);
}
