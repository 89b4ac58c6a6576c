#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "preflab/acquisition.hpp"
#include "preflab/error.hpp"

using namespace preflab;

namespace {

// Linear one-feature members: the logit of pair (a, b) under member m is w_m * (a - b).
Ensemble linear_ensemble(const std::vector<double>& head_weights) {
  ModelConfig c;
  c.d = 1;
  c.hidden_widths = {};
  EnsembleConfig ec = EnsembleConfig::with_members(head_weights.size(), 1);
  ec.init_mode = InitMode::IndependentInit;
  ec.bootstrap_enabled = false;
  Ensemble e = init_ensemble(RewardModel(c, 0), ec);
  for (std::size_t i = 0; i < head_weights.size(); ++i) e.member(i).head_weights()[0] = head_weights[i];
  return e;
}

double logit(double p) { return std::log(p / (1 - p)); }

std::vector<ComparisonPair> scalar_pairs(const std::vector<std::pair<double, double>>& xs) {
  std::vector<ComparisonPair> out;
  for (std::size_t i = 0; i < xs.size(); ++i)
    out.push_back(fixtures::make_pair("q" + std::to_string(i), {xs[i].first}, {xs[i].second}, std::nullopt));
  return out;
}

const StrategyKind kAll[] = {StrategyKind::Random, StrategyKind::Uncertainty, StrategyKind::Thompson,
                             StrategyKind::Variance};

}  // namespace

TEST_SUITE("acquisition") {

TEST_CASE("uncertainty picks the least confident pair") {
  const Ensemble e = linear_ensemble({1.0});
  const auto pool = scalar_pairs({{logit(0.9), 0}, {logit(0.55), 0}, {logit(0.99), 0}});
  Rng rng(1);
  const auto scores = score_pool({StrategyKind::Uncertainty}, e, refs(pool), rng);
  CHECK(scores[0] == doctest::Approx(-0.4));
  CHECK(scores[1] == doctest::Approx(-0.05));
  CHECK(scores[2] == doctest::Approx(-0.49));
  CHECK(select({StrategyKind::Uncertainty}, e, refs(pool), rng) == 1);

  const auto even = scalar_pairs({{0.3, 0.3}});
  CHECK(score_pool({StrategyKind::Uncertainty}, e, refs(even), rng)[0] == 0.0);
}

TEST_CASE("singleton pool selects index zero for every strategy") {
  const Ensemble e = linear_ensemble({0.5, 2.0, -1.0});
  const auto pool = scalar_pairs({{0.7, -0.2}});
  Rng rng(2);
  for (StrategyKind k : kAll) CHECK(select({k}, e, refs(pool), rng) == 0);
}

TEST_CASE("empty pool is an error") {
  const Ensemble e = linear_ensemble({1.0});
  const PairRefs empty;
  Rng rng(3);
  for (StrategyKind k : kAll) CHECK_THROWS_AS(select({k}, e, empty, rng), Error);
}

TEST_CASE("variance is zero for identical members and finds the unique spread") {
  const Ensemble same = linear_ensemble({1.3, 1.3, 1.3});
  const auto pool = scalar_pairs({{0.4, -0.4}, {1.0, 2.0}, {-3.0, 0.5}});
  Rng rng(4);
  for (double s : score_pool({StrategyKind::Variance}, same, refs(pool), rng)) CHECK(s == 0.0);

  const Ensemble spread = linear_ensemble({0.5, 1.5, 3.0});
  const auto pool2 = scalar_pairs({{0.2, 0.2}, {-1.0, -1.0}, {1.0, 0.0}, {4.0, 4.0}});
  const auto scores = score_pool({StrategyKind::Variance}, spread, refs(pool2), rng);
  CHECK(scores[0] == 0.0);
  CHECK(scores[2] > 0.0);
  CHECK(select({StrategyKind::Variance}, spread, refs(pool2), rng) == 2);
}

TEST_CASE("thompson with one member scores by that member's best item") {
  ModelConfig c;
  c.d = 3;
  c.hidden_widths = {5};
  EnsembleConfig ec = EnsembleConfig::with_members(1, 2);
  const Ensemble e = init_ensemble(RewardModel(c, 3), ec);
  Rng frng(5);
  std::vector<ComparisonPair> pool;
  for (int i = 0; i < 6; ++i)
    pool.push_back(fixtures::make_pair("t" + std::to_string(i), fixtures::normal_vector(frng, 3),
                                       fixtures::normal_vector(frng, 3), std::nullopt));
  Rng r1(6), r2(7);
  const auto s1 = score_pool({StrategyKind::Thompson}, e, refs(pool), r1);
  const auto s2 = score_pool({StrategyKind::Thompson}, e, refs(pool), r2);
  CHECK(s1 == s2);
  for (std::size_t i = 0; i < pool.size(); ++i)
    CHECK(s1[i] == std::max(reward(e.member(0), pool[i].first), reward(e.member(0), pool[i].second)));
}

TEST_CASE("thompson with identical members is greedy by reward") {
  const Ensemble e = linear_ensemble({2.0, 2.0, 2.0});
  const auto pool = scalar_pairs({{0.1, 0.5}, {1.5, -2.0}, {0.9, 1.2}});
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    CHECK(select({StrategyKind::Thompson}, e, refs(pool), rng) == 1);
  }
}

TEST_CASE("selection is invariant under an increasing transform of scores") {
  Rng rng(8);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> s(1 + uniform_index(rng, 12));
    for (double& x : s) x = std::round(4 * standard_normal(rng)) / 4;  // ties are common
    std::vector<double> e;
    for (double x : s) e.push_back(std::exp(x));
    CHECK(argmax_first(s) == argmax_first(e));
  }
  CHECK(argmax_first(std::vector<double>{1, 3, 3, 2}) == 1);
}

TEST_CASE("uncertainty and variance scores ignore pair order") {
  ModelConfig c;
  c.d = 4;
  c.hidden_widths = {6};
  const Ensemble e = init_ensemble(RewardModel(c, 1), EnsembleConfig::with_members(4, 9));
  Rng frng(10);
  std::vector<ComparisonPair> ab, ba;
  for (int i = 0; i < 50; ++i) {
    auto a = fixtures::normal_vector(frng, 4), b = fixtures::normal_vector(frng, 4);
    ab.push_back(fixtures::make_pair("ab" + std::to_string(i), a, b, std::nullopt));
    ba.push_back(fixtures::make_pair("ba" + std::to_string(i), b, a, std::nullopt));
  }
  Rng rng(11);
  for (StrategyKind k : {StrategyKind::Uncertainty, StrategyKind::Variance}) {
    const auto s1 = score_pool({k}, e, refs(ab), rng);
    const auto s2 = score_pool({k}, e, refs(ba), rng);
    for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s1[i] == doctest::Approx(s2[i]).epsilon(1e-12));
  }
}

TEST_CASE("random selection is uniform over the pool") {
  const Ensemble e = linear_ensemble({1.0});
  const auto pool = scalar_pairs({{0, 1}, {1, 0}, {2, 2}, {0.5, 0.1}, {3, 1}});
  const std::size_t k = pool.size(), n = 20000;
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t t = 0; t < n; ++t) {
    Rng rng(derive_seed(99, t));
    ++counts[select({StrategyKind::Random}, e, refs(pool), rng)];
  }
  const double p = 1.0 / k;
  for (std::size_t c : counts) CHECK(std::abs(double(c) / n - p) <= 3 * std::sqrt(p * (1 - p) / n));
}

TEST_CASE("strategy names round-trip") {
  for (StrategyKind k : kAll) CHECK(parse_strategy(to_string(k)) == k);
  CHECK_THROWS_AS(parse_strategy("entropy"), Error);
}

}  // TEST_SUITE
