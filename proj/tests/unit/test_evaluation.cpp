#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "preflab/error.hpp"
#include "preflab/evaluation.hpp"

using namespace preflab;

namespace {

double kl_formula(double p, double q) { return p * std::log(p / q) + (1 - p) * std::log((1 - p) / (1 - q)); }

// Quadratic-time average ranks, then a two-pass Pearson.
double brute_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double w : v) less += w < v[i], equal += w == v[i];
      r[i] = less + (equal + 1) / 2;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = double(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += rx[i] / n, my += ry[i] / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

// Percentile bootstrap with its own generator, used as an independent reference.
std::pair<double, double> reference_ci(const std::vector<double>& s, double level, int resamples, unsigned seed) {
  std::minstd_rand gen(seed);
  std::uniform_int_distribution<std::size_t> pick(0, s.size() - 1);
  std::vector<double> means;
  for (int b = 0; b < resamples; ++b) {
    double m = 0;
    for (std::size_t i = 0; i < s.size(); ++i) m += s[pick(gen)];
    means.push_back(m / s.size());
  }
  std::sort(means.begin(), means.end());
  const double a = (1 - level) / 2;
  return {means[std::size_t(a * (resamples - 1))], means[std::size_t((1 - a) * (resamples - 1))]};
}

Ensemble linear_members(const std::vector<double>& ws) {
  ModelConfig c;
  c.d = 1;
  c.hidden_widths = {};
  EnsembleConfig ec = EnsembleConfig::with_members(ws.size(), 1);
  ec.init_mode = InitMode::IndependentInit;
  Ensemble e = init_ensemble(RewardModel(c, 0), ec);
  for (std::size_t i = 0; i < ws.size(); ++i) e.member(i).head_weights()[0] = ws[i];
  return e;
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("bernoulli kl values") {
  CHECK(bernoulli_kl(0.3, 0.3) == 0.0);
  CHECK(bernoulli_kl(0.9, 0.5) == doctest::Approx(0.368064).epsilon(1e-5 / 0.368064));
  CHECK(bernoulli_kl(0.5, 0.9) == doctest::Approx(0.510826).epsilon(1e-5 / 0.510826));
  CHECK(std::abs(bernoulli_kl(0.9, 0.5) - kl_formula(0.9, 0.5)) < 1e-12);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double p = 0.001 + 0.998 * uniform01(rng), q = 0.001 + 0.998 * uniform01(rng);
    CHECK(std::abs(bernoulli_kl(p, q) - kl_formula(p, q)) < 1e-12);
    CHECK(bernoulli_kl(p, q) >= 0.0);
  }
  KlDiagnostics diag;
  const double edge = bernoulli_kl(0.0, 1.0, &diag);
  CHECK(std::isfinite(edge));
  CHECK(diag.clamp_events == 2);
  CHECK(edge == doctest::Approx(kl_formula(1e-6, 1 - 1e-6)));
}

TEST_CASE("spearman examples") {
  const std::vector<double> x{1, 2, 2, 3}, y{1, 2, 3, 4};
  CHECK(*spearman(x, y) == doctest::Approx(0.948683).epsilon(1e-6));
  const std::vector<double> a{0.3, -1, 4, 2.5, 7};
  CHECK(*spearman(a, a) == doctest::Approx(1.0));
  std::vector<double> rev = a;
  std::sort(rev.begin(), rev.end());
  std::vector<double> sorted = rev;
  std::reverse(rev.begin(), rev.end());
  CHECK(*spearman(sorted, rev) == doctest::Approx(-1.0));
  CHECK(!spearman(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}));
  CHECK_THROWS_AS(spearman(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), Error);
  CHECK_THROWS_AS(spearman(std::vector<double>{1}, std::vector<double>{1}), Error);
  CHECK(average_ranks(x) == std::vector<double>{1, 2.5, 2.5, 4});
}

TEST_CASE("spearman matches a brute-force oracle") {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + uniform_index(rng, 60);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = std::round(3 * standard_normal(rng));  // plenty of ties
      y[i] = standard_normal(rng) + 0.3 * x[i];
    }
    const auto r = spearman(x, y);
    if (!r) {
      CHECK(std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; }));
      continue;
    }
    CHECK(std::abs(*r - brute_spearman(x, y)) < 1e-12);
    CHECK(*spearman(y, x) == doctest::Approx(*r).epsilon(1e-12));
    std::vector<double> ey;
    for (double v : y) ey.push_back(std::exp(v));
    CHECK(*spearman(x, ey) == doctest::Approx(*r).epsilon(1e-12));
    std::vector<double> ny;
    for (double v : y) ny.push_back(-v);
    CHECK(*spearman(x, ny) == doctest::Approx(-*r).epsilon(1e-12));
  }
}

TEST_CASE("calibration placement and perfect predictor") {
  const std::vector<Prediction> one{{0.75, true}};
  const CalibrationReport r = calibration_curve(one);
  REQUIRE(r.bins.size() == 10);
  CHECK(r.bins[5].count == 1);
  CHECK(*r.bins[5].mean_accuracy == 1.0);
  CHECK(r.bins[5].confidence_lo == doctest::Approx(0.75));
  CHECK(!r.bins[0].mean_accuracy);

  std::vector<Prediction> sure(20, {1.0, true});
  const CalibrationReport s = calibration_curve(sure);
  CHECK(s.bins[9].count == 20);
  CHECK(*s.bins[9].mean_accuracy == 1.0);
  CHECK(s.ece == 0.0);

  for (std::size_t b = 0; b < 10; ++b) {
    CHECK(r.bins[b].confidence_lo == doctest::Approx(0.5 + 0.05 * b));
    CHECK(r.bins[b].confidence_hi == doctest::Approx(0.55 + 0.05 * b));
  }
  CHECK_THROWS_AS(calibration_curve(std::vector<Prediction>{{0.4, true}}), Error);
  CHECK_THROWS_AS(calibration_curve(std::vector<Prediction>{{1.01, true}}), Error);
}

TEST_CASE("self-sampled predictions are calibrated") {
  Rng rng(3);
  std::vector<Prediction> preds;
  const std::size_t n = 50000;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = uniform01(rng);
    const Choice label = uniform01(rng) < p ? Choice::First : Choice::Second;
    preds.push_back(to_prediction(p, label));
  }
  const CalibrationReport r = calibration_curve(preds);
  std::size_t total = 0;
  for (const auto& b : r.bins) total += b.count;
  CHECK(total == n);
  CHECK(r.ece < 0.02);
  CHECK(r.ece >= 0.0);
}

TEST_CASE("bootstrap interval examples") {
  CHECK(bootstrap_ci(std::vector<double>(30, 0.7)).lo == 0.7);
  CHECK(bootstrap_ci(std::vector<double>(30, 0.7)).hi == 0.7);
  const Interval single = bootstrap_ci(std::vector<double>{0.42});
  CHECK(single.lo == 0.42);
  CHECK(single.hi == 0.42);

  // 100 samples, half ones: the mean has standard error 0.05
  std::vector<double> hundred(100, 0.0);
  std::fill(hundred.begin() + 50, hundred.end(), 1.0);
  const Interval h = bootstrap_ci(hundred, 0.95, 10000, 7);
  CHECK(std::abs(h.lo - 0.40) < 0.015);
  CHECK(std::abs(h.hi - 0.60) < 0.015);
  const auto ref_h = reference_ci(hundred, 0.95, 10000, 11);
  CHECK(std::abs(h.lo - ref_h.first) < 0.015);
  CHECK(std::abs(h.hi - ref_h.second) < 0.015);

  // 50 samples, half ones: standard error 0.0707
  std::vector<double> fifty(50, 0.0);
  std::fill(fifty.begin() + 25, fifty.end(), 1.0);
  const Interval f = bootstrap_ci(fifty, 0.95, 10000, 7);
  CHECK(std::abs(f.lo - 0.36) < 0.02);
  CHECK(std::abs(f.hi - 0.64) < 0.02);
  CHECK(f.lo < 0.5);
  CHECK(f.hi > 0.5);
  const Interval again = bootstrap_ci(fifty, 0.95, 10000, 7);
  CHECK(again.lo == f.lo);
  CHECK(again.hi == f.hi);
}

TEST_CASE("oracle label sampling") {
  const std::size_t n = 10000;
  const auto pair = fixtures::make_pair("o", {1.0}, {0.0}, std::nullopt);
  const std::vector<const ComparisonPair*> pairs(n, &pair);

  const Ensemble sure = linear_members({100.0});
  std::size_t first = 0;
  for (const auto& p : sample_oracle_labels(sure.member(0), pairs, 1)) first += *p.label == Choice::First;
  CHECK(double(first) / n >= 0.999);

  const Ensemble coin = linear_members({0.0});
  const auto a = sample_oracle_labels(coin.member(0), pairs, 2);
  const auto b = sample_oracle_labels(coin.member(0), pairs, 2);
  first = 0;
  for (std::size_t i = 0; i < n; ++i) {
    first += *a[i].label == Choice::First;
    CHECK(a[i].label == b[i].label);
  }
  CHECK(std::abs(double(first) / n - 0.5) <= 0.015);
}

TEST_CASE("oracle is deterministic and beats a subset-trained member") {
  const auto ds = fixtures::small_dataset(4, 8, 1000);
  OracleConfig oc;
  oc.model.d = 8;
  oc.model.hidden_widths = {16, 16};
  oc.train.epochs = 4;
  oc.train.learning_rate = 3e-3;
  oc.seed = 5;
  const RewardModel o1 = train_oracle(ds, oc);
  const RewardModel o2 = train_oracle(ds, oc);
  CHECK(o1 == o2);

  const PairRefs all = ds.labeled(Split::Train);
  const PairRefs subset(all.begin(), all.begin() + 100);
  TrainConfig tc = oc.train;
  tc.seed = 6;
  const RewardModel member = train_pairs(RewardModel(oc.model, 7), subset, tc).model;
  auto acc = [&](const RewardModel& m) {
    double c = 0;
    for (const ComparisonPair* p : ds.labeled(Split::Valid)) c += (prefer_prob(m, *p) > 0.5) == (*p->label == Choice::First);
    return c / ds.labeled(Split::Valid).size();
  };
  CHECK(acc(o1) >= acc(member));

  const auto labels = sample_oracle_labels(o1, ds.split(Split::Test), 8);
  std::vector<Prediction> preds;
  for (const auto& p : labels) preds.push_back(to_prediction(prefer_prob(o1, p), *p.label));
  CHECK(preds.size() == ds.split(Split::Test).size());
}

TEST_CASE("oracle self-calibration over many samples") {
  const auto ds = fixtures::small_dataset(9, 8, 512);
  const RewardModel oracle(ModelConfig{8, {16}, Activation::Tanh}, 10);
  PairRefs pool;
  while (pool.size() < 50000)
    for (const ComparisonPair* p : ds.split(Split::Train)) pool.push_back(p);
  pool.resize(50000);
  const auto labeled = sample_oracle_labels(oracle, pool, 11);
  std::vector<Prediction> preds;
  for (const auto& p : labeled) preds.push_back(to_prediction(prefer_prob(oracle, p), *p.label));
  CHECK(calibration_curve(preds).ece < 0.02);
}

TEST_CASE("replicated oracle has zero error and undefined correlation") {
  const auto ds = fixtures::small_dataset(12);
  const RewardModel oracle(ModelConfig{8, {8}, Activation::Tanh}, 13);
  const Ensemble rep = replicate_model(oracle, 5);
  const UncertaintyQualityReport r = uncertainty_quality(rep, oracle, ds.split(Split::Test));
  CHECK(r.points.size() == ds.split(Split::Test).size());
  for (const auto& pt : r.points) {
    CHECK(pt.kl_error == 0.0);
    CHECK(pt.variance == 0.0);
  }
  CHECK(!r.spearman_r);
  CHECK(r.ensemble_size == 5);
}

TEST_CASE("uncertainty quality from given probabilities") {
  const std::vector<std::string> ids{"a", "b", "c", "d"};
  const std::vector<double> model{0.6, 0.7, 0.2, 0.9}, oracle{0.6, 0.5, 0.5, 0.1}, var{0.0, 0.01, 0.02, 0.05};
  const auto r = uncertainty_quality_from_probs(ids, model, oracle, var, KlDirection::ModelToOracle);
  std::vector<double> kl;
  for (std::size_t i = 0; i < 4; ++i) {
    kl.push_back(kl_formula(model[i], oracle[i]));
    CHECK(std::abs(r.points[i].kl_error - kl[i]) < 1e-12);
  }
  REQUIRE(r.spearman_r);
  CHECK(*r.spearman_r == doctest::Approx(brute_spearman(kl, var)).epsilon(1e-12));
  const auto rev = uncertainty_quality_from_probs(ids, model, oracle, var, KlDirection::OracleToModel);
  CHECK(std::abs(rev.points[1].kl_error - kl_formula(0.5, 0.7)) < 1e-12);
}

TEST_CASE("member disagreement") {
  const Ensemble e = linear_members({1.0, 2.0});
  const auto pair = fixtures::make_pair("m", {1.0}, {0.0}, std::nullopt);
  const std::vector<const ComparisonPair*> pairs{&pair};
  const double expect = 1 / (1 + std::exp(-2.0)) - 1 / (1 + std::exp(-1.0));
  CHECK(member_disagreement(e, pairs) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(member_disagreement(replicate_model(e.member(0), 3), pairs) == 0.0);
}

}  // TEST_SUITE
