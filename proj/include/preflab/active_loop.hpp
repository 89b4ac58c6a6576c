#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "preflab/acquisition.hpp"
#include "preflab/error.hpp"
#include "preflab/evaluation.hpp"
#include "preflab/json_io.hpp"

namespace preflab {

enum class LabelerKind { DatasetLabels, OracleSampler, HumanSession };
std::string_view to_string(LabelerKind k);
LabelerKind parse_labeler_kind(std::string_view text);

/// Supplies labels for acquired pairs. HumanSession labelers call `human`,
/// which returns nullopt when the annotator aborts.
class Labeler {
 public:
  using HumanFn = std::function<std::optional<Choice>(const ComparisonPair&)>;

  static Labeler dataset_labels();
  static Labeler oracle_sampler(RewardModel oracle, std::uint64_t seed);
  static Labeler human_session(HumanFn fn);

  LabelerKind kind() const { return kind_; }
  const std::optional<RewardModel>& oracle() const { return oracle_; }
  /// Null optional means the session was aborted.
  std::optional<Choice> label(const ComparisonPair& pair);
  std::size_t calls() const { return calls_; }

 private:
  LabelerKind kind_ = LabelerKind::DatasetLabels;
  std::optional<RewardModel> oracle_;
  Rng rng_;
  HumanFn human_;
  std::size_t calls_ = 0;
};

struct ActiveConfig {
  std::size_t budget = 4096;
  std::size_t pool_size = 16;
  std::size_t replay_epochs = 2;
  std::size_t eval_every = 256;
  // Acquired pairs accumulated per optimizer step.
  std::size_t online_batch = 1;
  // Leading acquisitions chosen uniformly from the pool.
  std::size_t warm_start = 0;
  std::size_t replay_batch_size = 32;
  AcquisitionStrategy strategy;
  Split eval_split = Split::Test;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  std::uint64_t pool_seed = 0;
  std::uint64_t label_seed = 0;
  std::uint64_t train_seed = 0;
  std::uint64_t acquisition_seed = 0;

  /// Sub-seeds derived from one base seed.
  void derive_seeds(std::uint64_t base);
  void validate() const;
  bool operator==(const ActiveConfig&) const = default;
};

struct AcquisitionRecord {
  std::size_t step = 0;  // 1-based
  std::vector<std::string> pool;
  std::string chosen;
  std::size_t chosen_index = 0;
  Choice label = Choice::First;
  std::vector<double> member_losses;  // pre-update NLL of the chosen pair
  double variance_before = 0.0;
  double variance_after = 0.0;
  bool updated = false;  // an optimizer step ran after this acquisition

  bool operator==(const AcquisitionRecord&) const = default;
};

struct Snapshot {
  std::size_t step = 0;
  std::string phase;  // "online" or "final"
  Split split = Split::Test;
  double accuracy = 0.0;

  bool operator==(const Snapshot&) const = default;
};

struct PhaseTimings {
  double online_seconds = 0.0;
  double replay_seconds = 0.0;
  double eval_seconds = 0.0;
};

struct RunLog {
  ActiveConfig config;
  LabelerKind labeler = LabelerKind::DatasetLabels;
  std::vector<AcquisitionRecord> records;
  std::vector<Snapshot> snapshots;
  std::size_t labeler_calls_online = 0;
  std::size_t labeler_calls_replay = 0;
  std::size_t bootstrap_draws_online = 0;
  std::size_t bootstrap_draws_replay = 0;
  std::size_t replay_steps = 0;
  PhaseTimings timings;  // excluded from equality and from the persisted log

  bool operator==(const RunLog& o) const {
    return config == o.config && labeler == o.labeler && records == o.records &&
           snapshots == o.snapshots && labeler_calls_online == o.labeler_calls_online &&
           labeler_calls_replay == o.labeler_calls_replay &&
           bootstrap_draws_online == o.bootstrap_draws_online &&
           bootstrap_draws_replay == o.bootstrap_draws_replay && replay_steps == o.replay_steps;
  }
};

/// A pending acquisition: the sampled pool and the selected pair.
struct Query {
  std::size_t step = 0;
  std::vector<const ComparisonPair*> pool;
  std::size_t chosen_index = 0;
  const ComparisonPair* chosen() const { return pool.at(chosen_index); }
};

/// Step-by-step engine behind run_active and the annotation service.
class ActiveLearner {
 public:
  ActiveLearner(const PreferenceDataset& dataset, Ensemble ensemble, ActiveConfig config,
                LabelerKind labeler_kind);

  /// Samples a pool from the unlabeled remainder and selects one pair.
  Query propose();
  /// Records the label for `query`, updates the members and returns the record.
  const AcquisitionRecord& apply_label(const Query& query, Choice label);
  /// Replay epochs over the acquired set followed by the final snapshot.
  void finish();

  std::size_t labeled() const { return log_.records.size(); }
  bool online_complete() const { return labeled() >= config_.budget; }
  bool finished() const { return finished_; }
  std::size_t remaining_pool() const { return unlabeled_.size(); }

  const Ensemble& ensemble() const { return ensemble_; }
  const RunLog& log() const { return log_; }
  RunLog& log() { return log_; }
  const ActiveConfig& config() const { return config_; }
  const std::vector<OptimizerState>& optimizers() const { return optimizers_; }
  /// Acquired pairs carrying the labels they were given.
  const std::deque<ComparisonPair>& acquired() const { return acquired_; }
  /// Mean epistemic variance over the pairs of the most recent pool.
  double mean_last_pool_variance() const;

 private:
  void update(std::span<const ComparisonPair* const> batch);
  void take_snapshot(std::string phase);

  const PreferenceDataset* dataset_;
  Ensemble ensemble_;
  ActiveConfig config_;
  std::vector<OptimizerState> optimizers_;
  std::vector<const ComparisonPair*> unlabeled_;
  std::deque<ComparisonPair> acquired_;
  std::vector<const ComparisonPair*> pending_batch_;
  std::vector<const ComparisonPair*> last_pool_;
  Rng pool_rng_;
  Rng acquisition_rng_;
  Rng replay_rng_;
  RunLog log_;
  bool finished_ = false;
};

/// Thrown by run_active when a human labeler aborts; the learner holds the
/// state reached so far.
class ActiveAborted : public Error {
 public:
  explicit ActiveAborted(std::size_t labeled)
      : Error(ErrorCode::Conflict, "labeling aborted after " + std::to_string(labeled) + " labels"),
        labeled_(labeled) {}
  std::size_t labeled() const { return labeled_; }

 private:
  std::size_t labeled_;
};

struct ActiveResult {
  Ensemble ensemble;
  RunLog log;
};

ActiveResult run_active(const PreferenceDataset& dataset, Ensemble ensemble, Labeler& labeler,
                        const ActiveConfig& config);

/// Fraction of labeled pairs of `split` whose aggregate probability falls on
/// the side of the stored label; p == 0.5 counts as half correct.
double evaluate_snapshot(const Ensemble& ensemble, const PreferenceDataset& dataset, Split split);
double accuracy_of(const Ensemble& ensemble, const PairRefs& pairs);

struct CompareConfig {
  ActiveConfig active;
  ModelConfig model;
  std::size_t n_members = 8;
  bool bootstrap_enabled = true;
  InitMode init_mode = InitMode::IndependentInit;
  Aggregation aggregation = Aggregation::MeanProbability;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  double ci_level = 0.95;
  std::size_t ci_resamples = 10000;
  std::size_t threads = 0;  // 0: hardware concurrency
};

struct StrategyRow {
  std::string strategy;
  std::size_t step = 0;
  double mean_accuracy = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

struct StrategyReport {
  std::vector<StrategyRow> rows;
  // runs[s][k]: strategy s, seed k
  std::vector<std::vector<RunLog>> runs;
};

/// Runs every (strategy, seed) cell. Cells with the same seed share the
/// initial ensemble and sub-seeds. `backbone` is needed for SharedBackbone;
/// `oracle` switches the labeler to OracleSampler.
StrategyReport compare_strategies(const PreferenceDataset& dataset,
                                  const std::vector<AcquisitionStrategy>& strategies,
                                  const CompareConfig& config, const RewardModel* backbone = nullptr,
                                  const RewardModel* oracle = nullptr);

std::string strategy_report_csv(const StrategyReport& report);

// Persistence -------------------------------------------------------------------

Json to_json(const ActiveConfig& config);
ActiveConfig active_config_from_json(const Json& j);
Json to_json(const AcquisitionRecord& record);
AcquisitionRecord acquisition_record_from_json(const Json& j);
Json to_json(const Snapshot& snapshot);
Json runlog_summary(const RunLog& log);
std::string runlog_jsonl(const RunLog& log);
/// Writes runlog.jsonl and summary.json into `dir`.
void write_runlog(const RunLog& log, const std::filesystem::path& dir);

}  // namespace preflab
