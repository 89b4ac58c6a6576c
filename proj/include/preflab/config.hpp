#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "preflab/active_loop.hpp"
#include "preflab/json_io.hpp"

namespace preflab {

enum class ValueType { Int, Float, Bool, String, IntList, FloatList, StringList };
std::string_view to_string(ValueType t);

struct KeySpec {
  std::string key;
  ValueType type;
  Json default_value;
  std::string help;
};

/// Every accepted key with its type and default.
const std::vector<KeySpec>& config_schema();
const KeySpec* find_key(std::string_view key);

/// Resolved configuration: every schema key has a value.
///
/// Text format, one entry per line:
///   # comment
///   active.budget = 4096
///   model.hidden_widths = [64, 64]
///   active.strategy = variance      (bare words are strings)
class Config {
 public:
  /// All defaults, seeds derived from `seed`.
  static Config defaults();

  /// Parses and checks key/value text. Unknown keys and type mismatches
  /// are ConfigError naming the key. `source` prefixes messages.
  static std::map<std::string, Json> parse_text(std::string_view text, const std::string& source);
  static Json parse_value(std::string_view key, std::string_view text);

  /// Checks key and type; marks the key as explicitly set.
  void set(const std::string& key, Json value);
  void set_text(const std::string& key, std::string_view text);

  /// Forgets explicitness for non-seed keys that hold their default value.
  void demote_defaults();

  /// Fills every seeds.* key not set explicitly from `seed`.
  void derive_seeds();

  const Json& get(std::string_view key) const;
  std::int64_t get_int(std::string_view key) const;
  std::size_t get_size(std::string_view key) const;
  std::uint64_t get_seed(std::string_view key) const;
  double get_double(std::string_view key) const;
  bool get_bool(std::string_view key) const;
  std::string get_string(std::string_view key) const;
  std::vector<std::size_t> get_size_list(std::string_view key) const;
  std::vector<std::string> get_string_list(std::string_view key) const;

  bool is_explicit(std::string_view key) const { return explicit_.count(std::string(key)) > 0; }
  const std::map<std::string, Json>& values() const { return values_; }

  std::string to_text() const;
  Json to_json() const;
  /// FNV-1a of to_text().
  std::uint64_t hash() const;

  bool operator==(const Config& o) const { return values_ == o.values_; }

 private:
  std::map<std::string, Json> values_;
  std::set<std::string> explicit_;
};

/// Defaults, then the file (if any), then overrides in order; then seeds.
Config resolve_config(const std::optional<std::filesystem::path>& file,
                      const std::vector<std::pair<std::string, std::string>>& overrides);
/// Rebuilds a config from its to_json() form.
Config config_from_json(const Json& j);

// Typed views. Semantic errors name the key.
SyntheticConfig synthetic_config(const Config& c);
ModelConfig model_config(const Config& c, std::size_t d);
PretrainConfig pretrain_config(const Config& c);
EnsembleConfig ensemble_config(const Config& c);
TrainConfig train_config(const Config& c);
ActiveConfig active_config(const Config& c);
std::vector<AcquisitionStrategy> compare_strategies_list(const Config& c);
CompareConfig compare_config(const Config& c, std::size_t d);
OracleConfig oracle_config(const Config& c, std::size_t d);
OracleExperimentConfig oracle_experiment_config(const Config& c, std::size_t d);

}  // namespace preflab
