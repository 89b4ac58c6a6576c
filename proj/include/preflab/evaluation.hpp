#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "preflab/ensemble.hpp"

namespace preflab {

// Bernoulli KL ------------------------------------------------------------------

struct KlDiagnostics {
  std::size_t clamp_events = 0;
};

/// KL(Bernoulli(p) || Bernoulli(q)) in nats; p and q clamped to [1e-6, 1 - 1e-6].
double bernoulli_kl(double p, double q, KlDiagnostics* diagnostics = nullptr);

// Rank correlation --------------------------------------------------------------

/// 1-based ranks; ties receive the mean of the ranks they span.
std::vector<double> average_ranks(std::span<const double> x);

/// nullopt when either input has zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

/// Pearson correlation of average ranks. nullopt marks an undefined
/// correlation (zero rank variance). Throws on length mismatch or n < 2.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

// Calibration -------------------------------------------------------------------

struct Prediction {
  double confidence = 0.5;  // probability of the predicted class, in [0.5, 1]
  bool correct = false;
};

struct CalibrationBin {
  double confidence_lo = 0.0;
  double confidence_hi = 0.0;
  std::size_t count = 0;
  std::optional<double> mean_confidence;  // empty bins have no value
  std::optional<double> mean_accuracy;
};

struct CalibrationReport {
  std::vector<CalibrationBin> bins;
  double ece = 0.0;
  std::size_t total = 0;
  std::string split;
};

/// Equal-width bins over [0.5, 1.0]; ECE = sum_b (n_b / N) |acc_b - conf_b|.
CalibrationReport calibration_curve(std::span<const Prediction> predictions, std::size_t n_bins = 10);

/// Max-class confidence and correctness of an aggregate probability against a
/// label. At p = 0.5 the First class is taken as the prediction.
Prediction to_prediction(double p_first, Choice label);

std::vector<Prediction> ensemble_predictions(const Ensemble& ensemble, const PairRefs& pairs);

// Bootstrap CI ------------------------------------------------------------------

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Percentile bootstrap of the mean; deterministic given `seed`.
Interval bootstrap_ci(std::span<const double> samples, double level = 0.95,
                      std::size_t resamples = 10000, std::uint64_t seed = 0);

// Oracle labeler ----------------------------------------------------------------

struct OracleConfig {
  ModelConfig model;
  TrainConfig train;  // member budget; the oracle trains epoch_multiplier times longer
  std::size_t epoch_multiplier = 5;
  std::uint64_t seed = 0;
};

/// One model trained on every labeled train pair.
RewardModel train_oracle(const PreferenceDataset& dataset, const OracleConfig& config);

/// Copies of `pairs`, each labeled First with probability prefer_prob(oracle, pair).
std::vector<ComparisonPair> sample_oracle_labels(const RewardModel& oracle,
                                                 std::span<const ComparisonPair* const> pairs,
                                                 std::uint64_t seed);

/// n identical copies of `model` as an ensemble (bootstrap disabled).
Ensemble replicate_model(const RewardModel& model, std::size_t n);

// Uncertainty quality -----------------------------------------------------------

enum class KlDirection { ModelToOracle, OracleToModel };
std::string_view to_string(KlDirection d);
KlDirection parse_kl_direction(std::string_view text);

struct PointError {
  std::string pair_id;
  double kl_error = 0.0;
  double variance = 0.0;
};

struct UncertaintyQualityReport {
  std::vector<PointError> points;
  std::optional<double> spearman_r;
  std::optional<double> ci_lo;  // filled when aggregated across seeds
  std::optional<double> ci_hi;
  std::size_t ensemble_size = 0;
  bool bootstrap_enabled = false;
  KlDirection direction = KlDirection::ModelToOracle;
  KlDiagnostics diagnostics;
};

UncertaintyQualityReport uncertainty_quality(const Ensemble& ensemble, const RewardModel& oracle,
                                             const PairRefs& eval_pairs,
                                             KlDirection direction = KlDirection::ModelToOracle);

/// Same metric from precomputed per-point probabilities.
UncertaintyQualityReport uncertainty_quality_from_probs(std::span<const std::string> pair_ids,
                                                        std::span<const double> model_probs,
                                                        std::span<const double> oracle_probs,
                                                        std::span<const double> variances,
                                                        KlDirection direction);

/// Mean over pairs of the mean |p_i - p_j| across member pairs i < j.
double member_disagreement(const Ensemble& ensemble, const PairRefs& pairs);

// Oracle experiment -------------------------------------------------------------

struct OracleExperimentConfig {
  ModelConfig model;
  TrainConfig member_train;
  std::size_t subset_size = 1024;
  Split eval_split = Split::Test;
  std::vector<std::size_t> ensemble_sizes{3, 8, 16};
  bool bootstrap_enabled = true;
  InitMode init_mode = InitMode::IndependentInit;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  KlDirection direction = KlDirection::ModelToOracle;
  double ci_level = 0.95;
  std::size_t ci_resamples = 10000;
};

struct OracleSeedResult {
  std::uint64_t seed = 0;
  std::map<std::size_t, UncertaintyQualityReport> by_size;
  double disagreement = 0.0;  // of the largest ensemble on the eval pairs
};

struct SizeSummary {
  std::size_t ensemble_size = 0;
  std::optional<double> mean_r;  // over seeds with a defined correlation
  std::optional<Interval> ci;
  std::size_t defined_seeds = 0;
};

struct OracleExperimentResult {
  std::vector<OracleSeedResult> seeds;
  std::vector<SizeSummary> sizes;
  double mean_disagreement = 0.0;
};

/// For every seed: relabel a random train subset from the oracle, train the
/// largest requested ensemble on it, and score each nested prefix size.
/// `backbone` is required for SharedBackbone and supplies the model shape.
OracleExperimentResult run_oracle_experiment(const PreferenceDataset& dataset,
                                             const RewardModel& oracle,
                                             const OracleExperimentConfig& config,
                                             const RewardModel* backbone = nullptr);

}  // namespace preflab
