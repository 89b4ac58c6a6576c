#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "preflab/rng.hpp"

namespace preflab {

enum class Choice { First, Second };
enum class Split { Train, Valid, Test, Ood };

std::string_view to_string(Choice choice);
std::string_view to_string(Split split);
Choice parse_choice(std::string_view text);
Split parse_split(std::string_view text);

struct Item {
  std::string id;
  std::optional<std::string> text;
  std::vector<double> features;

  bool operator==(const Item&) const = default;
};

struct ComparisonPair {
  std::string pair_id;
  Item first;
  Item second;
  std::optional<Choice> label;
  Split split = Split::Train;
  // Inverse temperature used to sample the label, when known.
  std::optional<double> beta;

  bool operator==(const ComparisonPair&) const = default;
};

using PairRefs = std::vector<const ComparisonPair*>;

struct NoiseMode {
  enum class Kind { Homoscedastic, Heteroscedastic };
  Kind kind = Kind::Heteroscedastic;
  double beta = 1.0;  // Homoscedastic
  double beta_low = 0.3;  // Heteroscedastic, log-uniform on [beta_low, beta_high]
  double beta_high = 10.0;

  void validate() const;
  bool operator==(const NoiseMode&) const = default;
};

// r*(x) = w . tanh(A x / sqrt(d)); A is hidden x d, row-major.
struct TrueRewardParams {
  std::size_t d = 0;
  std::size_t hidden = 0;
  std::vector<double> projection;
  std::vector<double> weights;

  double evaluate(std::span<const double> x) const;
  bool operator==(const TrueRewardParams&) const = default;
};

struct SyntheticTruth {
  TrueRewardParams reward;
  NoiseMode noise;
  std::map<std::string, double> per_pair_beta;

  bool operator==(const SyntheticTruth&) const = default;
};

struct OodShift {
  std::vector<double> offset;  // length d
  double scale = 1.0;

  bool operator==(const OodShift&) const = default;
};

struct SyntheticConfig {
  std::size_t d = 32;
  std::size_t n_train = 8192;
  std::size_t n_valid = 2048;
  std::size_t n_test = 2048;
  std::size_t n_ood = 1024;
  std::size_t truth_hidden = 16;
  NoiseMode noise;
  // The built-in OOD split adds this offset to every coordinate.
  double ood_offset = 1.0;
  double ood_scale = 1.5;

  void validate() const;
  bool operator==(const SyntheticConfig&) const = default;
};

struct DatasetOrigin {
  std::uint64_t seed = 0;
  SyntheticConfig config;

  bool operator==(const DatasetOrigin&) const = default;
};

struct PreferenceDataset {
  std::size_t d = 0;
  std::vector<ComparisonPair> pairs;
  std::optional<SyntheticTruth> ground_truth;
  std::optional<DatasetOrigin> origin;

  PairRefs split(Split which) const;
  PairRefs labeled(Split which) const;
  const ComparisonPair& at(std::string_view pair_id) const;

  /// Throws on any broken invariant (ids, dimensions, finiteness).
  void validate() const;
  bool operator==(const PreferenceDataset&) const = default;
};

PairRefs refs(std::span<const ComparisonPair> pairs);

std::filesystem::path manifest_path_for(const std::filesystem::path& dataset_path);

PreferenceDataset load_dataset(const std::filesystem::path& path,
                               std::optional<std::size_t> expected_d = std::nullopt);

/// Writes `path` (JSON lines) and the sidecar manifest next to it.
void save_dataset(const PreferenceDataset& dataset, const std::filesystem::path& path);

/// Writes only the JSON-lines body. Used by save_dataset.
std::string dataset_to_jsonl(const PreferenceDataset& dataset);

TrueRewardParams sample_true_reward(std::size_t d, std::size_t hidden, std::uint64_t seed);

/// Draws First with probability sigmoid(beta * (r*(first) - r*(second))).
Choice sample_label(const TrueRewardParams& truth, double beta, const Item& first,
                    const Item& second, Rng& rng);

double sample_beta(const NoiseMode& noise, Rng& rng);

PreferenceDataset generate_synthetic(const SyntheticConfig& config, std::uint64_t seed);

/// New OOD pairs drawn from offset + scale * N(0, I), labeled by the source
/// dataset's r* and noise rule. With zero offset, unit scale and the source
/// seed, the features reproduce the source generator's first pairs.
PreferenceDataset make_ood_shift(const PreferenceDataset& dataset, const OodShift& shift,
                                 std::uint64_t seed, std::size_t count);

}  // namespace preflab
