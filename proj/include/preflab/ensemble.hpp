#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "preflab/model.hpp"

namespace preflab {

enum class InitMode { SharedBackbone, IndependentInit };
enum class Aggregation { MeanProbability, MeanLogit };
std::string_view to_string(InitMode m);
InitMode parse_init_mode(std::string_view text);
std::string_view to_string(Aggregation a);
Aggregation parse_aggregation(std::string_view text);

struct EnsembleConfig {
  std::size_t n_members = 8;
  bool bootstrap_enabled = true;
  InitMode init_mode = InitMode::SharedBackbone;
  std::vector<std::uint64_t> member_seeds;
  Aggregation aggregation = Aggregation::MeanProbability;
  std::uint64_t weight_seed = 0;
  // Diagnostic escape hatch: permits repeated member seeds.
  bool allow_duplicate_seeds = false;

  /// n distinct member seeds derived from `base_seed`.
  static EnsembleConfig with_members(std::size_t n, std::uint64_t base_seed);
  void validate() const;
  bool operator==(const EnsembleConfig&) const = default;
};

/// Per-(member, pair) bootstrap weights in {0, 2}, drawn lazily from a keyed
/// generator and never changed once drawn.
class BootstrapTable {
 public:
  BootstrapTable() = default;
  BootstrapTable(std::uint64_t seed, std::size_t n_members) : seed_(seed), n_(n_members) {}

  /// Returns 0 or 2; the first access for a key draws and memoizes.
  double weight(std::size_t member, const std::string& pair_id);
  /// Memoized weight if drawn, otherwise -1. Never draws.
  double peek(std::size_t member, const std::string& pair_id) const;

  std::uint64_t seed() const { return seed_; }
  std::size_t n_members() const { return n_; }
  /// Number of first-time draws so far.
  std::size_t draws() const { return draws_; }
  std::size_t lookups() const { return lookups_; }

  /// pair_id -> one character per member: '0', '2', or '-' (not drawn).
  const std::map<std::string, std::string>& entries() const { return entries_; }
  void restore(std::map<std::string, std::string> entries);
  BootstrapTable prefix(std::size_t k) const;

  bool operator==(const BootstrapTable& o) const {
    return seed_ == o.seed_ && n_ == o.n_ && entries_ == o.entries_;
  }

 private:
  std::uint64_t seed_ = 0;
  std::size_t n_ = 0;
  std::map<std::string, std::string> entries_;
  std::size_t draws_ = 0;
  std::size_t lookups_ = 0;
};

/// The raw keyed draw behind BootstrapTable (no memoization).
double keyed_bootstrap_weight(std::uint64_t weight_seed, std::size_t member,
                              const std::string& pair_id);

class Ensemble {
 public:
  Ensemble() = default;
  Ensemble(EnsembleConfig config, std::vector<RewardModel> members);

  const EnsembleConfig& config() const { return config_; }
  std::size_t size() const { return members_.size(); }
  const RewardModel& member(std::size_t i) const { return members_.at(i); }
  RewardModel& member(std::size_t i) { return members_.at(i); }
  const std::vector<RewardModel>& members() const { return members_; }

  /// 0 or 2 with bootstrap enabled (memoized); 1 otherwise.
  double bootstrap_weight(std::size_t member, const std::string& pair_id);
  const BootstrapTable& weights() const { return weights_; }
  BootstrapTable& weights() { return weights_; }

  /// The first k members with their weight table; used for nested-size sweeps.
  Ensemble prefix(std::size_t k) const;

  bool operator==(const Ensemble& o) const {
    return config_ == o.config_ && members_ == o.members_ && weights_ == o.weights_;
  }

 private:
  EnsembleConfig config_;
  std::vector<RewardModel> members_;
  BootstrapTable weights_;
};

/// SharedBackbone: every trunk is a bit-exact copy of the backbone trunk and
/// each head is re-initialised from its member seed. IndependentInit: trunk
/// and head both initialised from the member seed.
Ensemble init_ensemble(const RewardModel& backbone, const EnsembleConfig& config);

/// Trains each member on the labeled pairs of `split` with its own bootstrap
/// weights. All members share the shuffle order given by train_config.seed.
Ensemble train_ensemble(Ensemble ensemble, const PreferenceDataset& dataset, Split split,
                        const TrainConfig& train_config);
Ensemble train_ensemble_pairs(Ensemble ensemble, const PairRefs& pairs,
                              const TrainConfig& train_config);

std::vector<double> member_probs(const Ensemble& ensemble, const ComparisonPair& pair);

struct PairPrediction {
  double aggregate = 0.5;
  double variance = 0.0;
};

/// Aggregate and population variance from member probabilities.
PairPrediction summarize_member_probs(std::span<const double> probs, Aggregation aggregation);

PairPrediction predict(const Ensemble& ensemble, const ComparisonPair& pair);
double aggregate_prob(const Ensemble& ensemble, const ComparisonPair& pair);
/// Population (divide by n) variance of the member probabilities for First.
double epistemic_variance(const Ensemble& ensemble, const ComparisonPair& pair);

// Ensemble checkpoint: a directory with manifest.json and member_NNN.json.
void save_ensemble(const Ensemble& ensemble, const std::filesystem::path& dir);
Ensemble load_ensemble(const std::filesystem::path& dir);
std::string ensemble_to_string(const Ensemble& ensemble);

}  // namespace preflab
