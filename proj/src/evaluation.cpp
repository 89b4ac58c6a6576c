#include "preflab/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "preflab/error.hpp"

namespace preflab {

double bernoulli_kl(double p, double q, KlDiagnostics* diagnostics) {
  auto clamp = [&](double x) {
    const double c = std::clamp(x, kProbClamp, 1.0 - kProbClamp);
    if (c != x && diagnostics) ++diagnostics->clamp_events;
    return c;
  };
  p = clamp(p);
  q = clamp(q);
  if (p == q) return 0.0;
  const double kl = p * std::log(p / q) + (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
  return std::max(kl, 0.0);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::InvalidArgument, "length mismatch");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw Error(ErrorCode::InvalidArgument, "spearman: length mismatch (" +
                                                std::to_string(x.size()) + " vs " +
                                                std::to_string(y.size()) + ")");
  if (x.size() < 2) throw Error(ErrorCode::InvalidArgument, "spearman needs at least 2 points");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

// ---------------------------------------------------------------------------
// Calibration

CalibrationReport calibration_curve(std::span<const Prediction> predictions, std::size_t n_bins) {
  if (n_bins == 0) throw Error(ErrorCode::InvalidArgument, "n_bins must be positive");
  const double width = 0.5 / static_cast<double>(n_bins);
  CalibrationReport report;
  report.bins.resize(n_bins);
  std::vector<double> conf_sum(n_bins, 0.0), acc_sum(n_bins, 0.0);
  for (std::size_t b = 0; b < n_bins; ++b) {
    report.bins[b].confidence_lo = 0.5 + width * static_cast<double>(b);
    report.bins[b].confidence_hi = b + 1 == n_bins ? 1.0 : 0.5 + width * static_cast<double>(b + 1);
  }
  for (const auto& p : predictions) {
    if (!(p.confidence >= 0.5 && p.confidence <= 1.0))
      throw Error(ErrorCode::InvalidArgument,
                  "confidence " + std::to_string(p.confidence) + " outside [0.5, 1]");
    const auto raw = static_cast<std::size_t>((p.confidence - 0.5) * 2.0 * static_cast<double>(n_bins));
    const std::size_t b = std::min(raw, n_bins - 1);
    ++report.bins[b].count;
    conf_sum[b] += p.confidence;
    acc_sum[b] += p.correct ? 1.0 : 0.0;
  }
  report.total = predictions.size();
  double ece = 0.0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    auto& bin = report.bins[b];
    if (bin.count == 0) continue;
    const double c = static_cast<double>(bin.count);
    bin.mean_confidence = conf_sum[b] / c;
    bin.mean_accuracy = acc_sum[b] / c;
    ece += c / static_cast<double>(report.total) * std::abs(*bin.mean_accuracy - *bin.mean_confidence);
  }
  report.ece = ece;
  return report;
}

Prediction to_prediction(double p_first, Choice label) {
  const bool predicts_first = p_first >= 0.5;
  return {predicts_first ? p_first : 1.0 - p_first, predicts_first == (label == Choice::First)};
}

std::vector<Prediction> ensemble_predictions(const Ensemble& ensemble, const PairRefs& pairs) {
  std::vector<Prediction> out;
  out.reserve(pairs.size());
  for (const auto* p : pairs) {
    if (!p->label) continue;
    out.push_back(to_prediction(aggregate_prob(ensemble, *p), *p->label));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bootstrap

Interval bootstrap_ci(std::span<const double> samples, double level, std::size_t resamples,
                      std::uint64_t seed) {
  if (samples.empty()) throw Error(ErrorCode::EmptyInput, "bootstrap_ci needs samples");
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::InvalidArgument, "level must be in (0, 1)");
  if (resamples == 0) throw Error(ErrorCode::InvalidArgument, "resamples must be positive");
  const bool constant = std::all_of(samples.begin(), samples.end(), [&](double s) { return s == samples[0]; });
  if (constant) return {samples[0], samples[0]};

  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
  std::vector<double> means(resamples);
  for (double& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) s += samples[pick(rng)];
    m = s / static_cast<double>(samples.size());
  }
  std::sort(means.begin(), means.end());
  // Linearly interpolated empirical quantile.
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(means.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, means.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return means[lo] + (means[hi] - means[lo]) * frac;
  };
  const double alpha = (1.0 - level) / 2.0;
  return {quantile(alpha), quantile(1.0 - alpha)};
}

// ---------------------------------------------------------------------------
// Oracle

RewardModel train_oracle(const PreferenceDataset& dataset, const OracleConfig& config) {
  if (config.epoch_multiplier == 0)
    throw Error(ErrorCode::InvalidArgument, "oracle epoch multiplier must be positive");
  TrainConfig tc = config.train;
  tc.epochs *= config.epoch_multiplier;
  tc.seed = derive_seed(config.seed, "oracle-shuffle");
  return train(RewardModel(config.model, config.seed), dataset, Split::Train, tc).model;
}

std::vector<ComparisonPair> sample_oracle_labels(const RewardModel& oracle,
                                                 std::span<const ComparisonPair* const> pairs,
                                                 std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ComparisonPair> out;
  out.reserve(pairs.size());
  for (const auto* p : pairs) {
    ComparisonPair copy = *p;
    const double prob = std::clamp(prefer_prob(oracle, *p), kProbClamp, 1.0 - kProbClamp);
    copy.label = uniform01(rng) < prob ? Choice::First : Choice::Second;
    copy.beta.reset();
    out.push_back(std::move(copy));
  }
  return out;
}

Ensemble replicate_model(const RewardModel& model, std::size_t n) {
  EnsembleConfig c;
  c.n_members = n;
  c.bootstrap_enabled = false;
  c.init_mode = InitMode::IndependentInit;
  c.member_seeds.assign(n, model.init_seed());
  c.allow_duplicate_seeds = true;
  return Ensemble(c, std::vector<RewardModel>(n, model));
}

// ---------------------------------------------------------------------------
// Uncertainty quality

std::string_view to_string(KlDirection d) {
  return d == KlDirection::ModelToOracle ? "model_oracle" : "oracle_model";
}

KlDirection parse_kl_direction(std::string_view text) {
  if (text == "model_oracle") return KlDirection::ModelToOracle;
  if (text == "oracle_model") return KlDirection::OracleToModel;
  throw Error(ErrorCode::InvalidArgument, "unknown KL direction '" + std::string(text) + "'");
}

UncertaintyQualityReport uncertainty_quality_from_probs(std::span<const std::string> pair_ids,
                                                        std::span<const double> model_probs,
                                                        std::span<const double> oracle_probs,
                                                        std::span<const double> variances,
                                                        KlDirection direction) {
  const std::size_t n = pair_ids.size();
  if (n == 0) throw Error(ErrorCode::EmptyInput, "no evaluation pairs");
  if (model_probs.size() != n || oracle_probs.size() != n || variances.size() != n)
    throw Error(ErrorCode::InvalidArgument, "per-point inputs are not aligned");
  UncertaintyQualityReport r;
  r.direction = direction;
  std::vector<double> errors(n);
  for (std::size_t i = 0; i < n; ++i) {
    errors[i] = direction == KlDirection::ModelToOracle
                    ? bernoulli_kl(model_probs[i], oracle_probs[i], &r.diagnostics)
                    : bernoulli_kl(oracle_probs[i], model_probs[i], &r.diagnostics);
    r.points.push_back({pair_ids[i], errors[i], variances[i]});
  }
  if (n >= 2) r.spearman_r = spearman(errors, variances);
  return r;
}

UncertaintyQualityReport uncertainty_quality(const Ensemble& ensemble, const RewardModel& oracle,
                                             const PairRefs& eval_pairs, KlDirection direction) {
  std::vector<std::string> ids;
  std::vector<double> model_p, oracle_p, var;
  for (const auto* p : eval_pairs) {
    const PairPrediction pred = predict(ensemble, *p);
    ids.push_back(p->pair_id);
    model_p.push_back(pred.aggregate);
    var.push_back(pred.variance);
    oracle_p.push_back(prefer_prob(oracle, *p));
  }
  UncertaintyQualityReport r = uncertainty_quality_from_probs(ids, model_p, oracle_p, var, direction);
  r.ensemble_size = ensemble.size();
  r.bootstrap_enabled = ensemble.config().bootstrap_enabled;
  return r;
}

double member_disagreement(const Ensemble& ensemble, const PairRefs& pairs) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyInput, "no pairs for disagreement");
  const std::size_t n = ensemble.size();
  if (n < 2) return 0.0;
  const double n_pairs = static_cast<double>(n * (n - 1) / 2);
  double total = 0.0;
  for (const auto* p : pairs) {
    const auto probs = member_probs(ensemble, *p);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += std::abs(probs[i] - probs[j]);
    total += s / n_pairs;
  }
  return total / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------
// Oracle experiment

OracleExperimentResult run_oracle_experiment(const PreferenceDataset& dataset,
                                             const RewardModel& oracle,
                                             const OracleExperimentConfig& config,
                                             const RewardModel* backbone) {
  if (config.ensemble_sizes.empty() || config.seeds.empty())
    throw Error(ErrorCode::InvalidArgument, "oracle experiment needs sizes and seeds");
  if (config.init_mode == InitMode::SharedBackbone && backbone == nullptr)
    throw Error(ErrorCode::InvalidArgument, "shared-backbone ensembles need a backbone");
  const std::size_t max_size = *std::max_element(config.ensemble_sizes.begin(), config.ensemble_sizes.end());
  const PairRefs train_pairs = dataset.split(Split::Train);
  const PairRefs eval_pairs = dataset.split(config.eval_split);
  if (train_pairs.empty() || eval_pairs.empty())
    throw Error(ErrorCode::EmptyInput, "oracle experiment needs train and eval pairs");
  const std::size_t subset = std::min(config.subset_size, train_pairs.size());
  const RewardModel shape = backbone ? *backbone : RewardModel(config.model, 0);

  OracleExperimentResult result;
  for (std::uint64_t seed : config.seeds) {
    // Random subset of the train split, relabeled by the oracle.
    PairRefs chosen = train_pairs;
    Rng subset_rng(derive_seed(seed, "subset"));
    std::shuffle(chosen.begin(), chosen.end(), subset_rng);
    chosen.resize(subset);
    const std::vector<ComparisonPair> relabeled =
        sample_oracle_labels(oracle, chosen, derive_seed(seed, "oracle-labels"));

    EnsembleConfig ec = EnsembleConfig::with_members(max_size, derive_seed(seed, "ensemble"));
    ec.bootstrap_enabled = config.bootstrap_enabled;
    ec.init_mode = config.init_mode;
    TrainConfig tc = config.member_train;
    tc.seed = derive_seed(seed, "member-shuffle");
    Ensemble trained = train_ensemble_pairs(init_ensemble(shape, ec), refs(relabeled), tc);

    OracleSeedResult sr;
    sr.seed = seed;
    for (std::size_t k : config.ensemble_sizes)
      sr.by_size[k] = uncertainty_quality(trained.prefix(k), oracle, eval_pairs, config.direction);
    sr.disagreement = member_disagreement(trained, eval_pairs);
    result.seeds.push_back(std::move(sr));
  }

  double dis = 0.0;
  for (const auto& s : result.seeds) dis += s.disagreement;
  result.mean_disagreement = dis / static_cast<double>(result.seeds.size());

  for (std::size_t k : config.ensemble_sizes) {
    SizeSummary summary;
    summary.ensemble_size = k;
    std::vector<double> rs;
    for (const auto& s : result.seeds)
      if (s.by_size.at(k).spearman_r) rs.push_back(*s.by_size.at(k).spearman_r);
    summary.defined_seeds = rs.size();
    if (!rs.empty()) {
      summary.mean_r = std::accumulate(rs.begin(), rs.end(), 0.0) / static_cast<double>(rs.size());
      summary.ci = bootstrap_ci(rs, config.ci_level, config.ci_resamples, derive_seed(k, "ci"));
    }
    for (auto& s : result.seeds) {
      if (summary.ci) {
        s.by_size.at(k).ci_lo = summary.ci->lo;
        s.by_size.at(k).ci_hi = summary.ci->hi;
      }
    }
    result.sizes.push_back(summary);
  }
  return result;
}

}  // namespace preflab
