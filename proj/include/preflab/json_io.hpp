#pragma once

// JSON conversions shared between modules (manifests, checkpoints, reports).

#include <cstdio>
#include <string>

#include "json.hpp"
#include "preflab/data.hpp"
#include "preflab/model.hpp"

namespace preflab {

using Json = nlohmann::json;

Json to_json(const NoiseMode& noise);
NoiseMode noise_from_json(const Json& j);

Json to_json(const SyntheticConfig& config);
SyntheticConfig synthetic_config_from_json(const Json& j);

Json to_json(const TrueRewardParams& params);
TrueRewardParams true_reward_from_json(const Json& j);

Json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const Json& j);

Json to_json(const RewardModel& model);
RewardModel reward_model_from_json(const Json& j);

Json to_json(const OptimizerState& state);
OptimizerState optimizer_from_json(const Json& j);

/// %.17g; always round-trips a finite double.
inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

Json read_json_file(const std::string& path);
/// Writes `text` to `path` via a temporary file and rename.
void write_text_file(const std::string& path, const std::string& text);

}  // namespace preflab
