#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "preflab/data.hpp"

namespace preflab {

enum class Activation { Tanh, ReLU };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view text);

struct ModelConfig {
  std::size_t d = 32;
  std::vector<std::size_t> hidden_widths{64, 64};
  Activation activation = Activation::Tanh;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// One dense layer inside the flat parameter vector: W is out x in, row-major.
struct LayerShape {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;

  bool operator==(const LayerShape&) const = default;
};

/// Multi-layer trunk plus a linear scalar head. Parameters live in one flat
/// vector laid out layer by layer (weights, then biases); the head is last.
class RewardModel {
 public:
  RewardModel() = default;
  /// Trunk and head initialised from `init_seed`: weights ~ N(0, 1/sqrt(fan_in)), biases 0.
  RewardModel(ModelConfig config, std::uint64_t init_seed);

  const ModelConfig& config() const { return config_; }
  std::uint64_t init_seed() const { return init_seed_; }
  const std::vector<LayerShape>& layers() const { return layers_; }
  std::size_t parameter_count() const { return params_.size(); }
  /// Number of leading parameters that belong to the trunk.
  std::size_t trunk_size() const;

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  std::span<const double> trunk_parameters() const;
  std::span<double> head_weights();
  std::span<const double> head_weights() const;
  double& head_bias();
  double head_bias() const;

  void reinit_head(std::uint64_t seed);
  void reinit_trunk(std::uint64_t seed);
  /// Copies the trunk of `other` (same config) into this model.
  void copy_trunk_from(const RewardModel& other);

  /// Name of the parameter block holding flat index `i`, e.g. "layer1.weight".
  std::string block_name(std::size_t i) const;

  bool operator==(const RewardModel& other) const {
    return config_ == other.config_ && init_seed_ == other.init_seed_ && params_ == other.params_;
  }

 private:
  void build_layout();
  void init_layer(std::size_t layer, Rng& rng);

  ModelConfig config_;
  std::uint64_t init_seed_ = 0;
  std::vector<LayerShape> layers_;
  std::vector<double> params_;
};

struct Gradients {
  std::vector<double> values;  // same layout as RewardModel::parameters()
};

/// Numerically safe logistic function with sigma(-x) == 1 - sigma(x) exactly.
double sigmoid(double x);

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] inside logs.
inline constexpr double kProbClamp = 1e-6;

double reward(const RewardModel& model, std::span<const double> features);
double reward(const RewardModel& model, const Item& item);

/// reward(first) - reward(second). The head bias cancels and is not added.
double logit_difference(const RewardModel& model, const ComparisonPair& pair);

/// P(first preferred) = sigmoid(reward(first) - reward(second)).
double prefer_prob(const RewardModel& model, const ComparisonPair& pair);

/// Weighted mean preference NLL: sum_i w_i * -log p(chosen_i) / sum_i w_i.
double nll_loss(const RewardModel& model, std::span<const ComparisonPair* const> batch,
                std::span<const double> weights);

/// Exact reverse-mode gradient of nll_loss with respect to every parameter.
Gradients grad(const RewardModel& model, std::span<const ComparisonPair* const> batch,
               std::span<const double> weights);

/// Loss and gradient in one pass.
double loss_and_grad(const RewardModel& model, std::span<const ComparisonPair* const> batch,
                     std::span<const double> weights, Gradients& out);

enum class OptimizerKind { SGD, Adam };

std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view text);

struct OptimizerState {
  OptimizerKind algorithm = OptimizerKind::Adam;
  std::uint64_t step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> first_moment;
  std::vector<double> second_moment;

  static OptimizerState adam(std::size_t n_params, double lr = 1e-3);
  static OptimizerState sgd(double lr);
  bool operator==(const OptimizerState&) const = default;
};

/// Applies a precomputed gradient. Throws NonFinite naming the offending block.
void apply_gradient(RewardModel& model, OptimizerState& opt, const Gradients& g);

/// One optimizer update on the batch; returns the pre-update loss.
double train_step(RewardModel& model, OptimizerState& opt,
                  std::span<const ComparisonPair* const> batch, std::span<const double> weights);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;
  // When false the supplied weights are ignored and every pair counts once.
  bool apply_weights = true;

  void validate(bool allow_zero_epochs = true) const;
  bool operator==(const TrainConfig&) const = default;
};

struct TrainHistory {
  std::vector<double> epoch_losses;  // weighted mean loss per epoch (pre-update)
  std::size_t steps = 0;
};

struct TrainResult {
  RewardModel model;
  OptimizerState optimizer;
  TrainHistory history;
};

/// Trains on the labeled pairs of `split`. `weights` is empty (uniform) or
/// aligned with dataset.labeled(split). Batches whose weights are all zero
/// are skipped without an optimizer step.
TrainResult train(RewardModel model, const PreferenceDataset& dataset, Split split,
                  const TrainConfig& config, std::span<const double> weights = {});

/// Same, over an explicit pair list.
TrainResult train_pairs(RewardModel model, const PairRefs& pairs, const TrainConfig& config,
                        std::span<const double> weights = {});

/// Weight of pairs[index]; queried once per pair per epoch.
using WeightFn = std::function<double(std::size_t index)>;
TrainResult train_pairs(RewardModel model, const PairRefs& pairs, const TrainConfig& config,
                        const WeightFn& weights);

struct PretrainConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double target_noise = 0.1;

  bool operator==(const PretrainConfig&) const = default;
};

struct PretrainResult {
  RewardModel model;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

/// Emulates a foundation model: the trunk (with a temporary linear head) is
/// trained by MSE to predict a noisy random projection of the item features
/// of the train split. The returned head is freshly initialised and untrained.
PretrainResult pretrain_backbone(const PreferenceDataset& dataset, const ModelConfig& config,
                                 std::uint64_t seed, const PretrainConfig& pretrain = {});

/// Mean squared error of the proxy task for the given model (used for diagnostics).
double proxy_task_loss(const RewardModel& model, const PreferenceDataset& dataset,
                       std::uint64_t seed, double target_noise);

// Checkpoints -----------------------------------------------------------------

std::string checkpoint_to_string(const RewardModel& model);
RewardModel checkpoint_from_string(const std::string& text);
void save_checkpoint(const RewardModel& model, const std::filesystem::path& path);
RewardModel load_checkpoint(const std::filesystem::path& path);

}  // namespace preflab
