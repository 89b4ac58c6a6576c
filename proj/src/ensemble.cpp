#include "preflab/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "preflab/error.hpp"
#include "preflab/json_io.hpp"

namespace preflab {
namespace fs = std::filesystem;

std::string_view to_string(InitMode m) {
  return m == InitMode::SharedBackbone ? "shared" : "independent";
}

InitMode parse_init_mode(std::string_view text) {
  if (text == "shared") return InitMode::SharedBackbone;
  if (text == "independent") return InitMode::IndependentInit;
  throw Error(ErrorCode::InvalidArgument, "unknown init mode '" + std::string(text) + "'");
}

std::string_view to_string(Aggregation a) {
  return a == Aggregation::MeanProbability ? "mean_prob" : "mean_logit";
}

Aggregation parse_aggregation(std::string_view text) {
  if (text == "mean_prob") return Aggregation::MeanProbability;
  if (text == "mean_logit") return Aggregation::MeanLogit;
  throw Error(ErrorCode::InvalidArgument, "unknown aggregation '" + std::string(text) + "'");
}

EnsembleConfig EnsembleConfig::with_members(std::size_t n, std::uint64_t base_seed) {
  EnsembleConfig c;
  c.n_members = n;
  c.weight_seed = derive_seed(base_seed, "bootstrap");
  for (std::size_t i = 0; i < n; ++i) c.member_seeds.push_back(derive_seed(base_seed, i));
  return c;
}

void EnsembleConfig::validate() const {
  if (n_members == 0) throw Error(ErrorCode::InvalidArgument, "ensemble needs at least one member");
  if (member_seeds.size() != n_members)
    throw Error(ErrorCode::InvalidArgument,
                "member_seeds has " + std::to_string(member_seeds.size()) + " entries, expected " +
                    std::to_string(n_members));
  if (!allow_duplicate_seeds) {
    std::set<std::uint64_t> seen(member_seeds.begin(), member_seeds.end());
    if (seen.size() != member_seeds.size())
      throw Error(ErrorCode::InvalidArgument, "member seeds must be distinct");
  }
}

// ---------------------------------------------------------------------------
// Bootstrap weights

double keyed_bootstrap_weight(std::uint64_t weight_seed, std::size_t member,
                              const std::string& pair_id) {
  return keyed_uniform(weight_seed, member, pair_id) < 0.5 ? 0.0 : 2.0;
}

double BootstrapTable::weight(std::size_t member, const std::string& pair_id) {
  if (member >= n_) throw Error(ErrorCode::InvalidArgument, "member index out of range");
  ++lookups_;
  auto [it, inserted] = entries_.try_emplace(pair_id, std::string(n_, '-'));
  char& slot = it->second[member];
  if (slot == '-') {
    slot = keyed_bootstrap_weight(seed_, member, pair_id) == 0.0 ? '0' : '2';
    ++draws_;
  }
  return slot == '0' ? 0.0 : 2.0;
}

double BootstrapTable::peek(std::size_t member, const std::string& pair_id) const {
  auto it = entries_.find(pair_id);
  if (it == entries_.end() || member >= n_ || it->second[member] == '-') return -1.0;
  return it->second[member] == '0' ? 0.0 : 2.0;
}

void BootstrapTable::restore(std::map<std::string, std::string> entries) {
  for (const auto& [id, mask] : entries) {
    if (mask.size() != n_)
      throw Error(ErrorCode::ParseError, "weight mask for '" + id + "' has wrong length");
    for (char c : mask)
      if (c != '0' && c != '2' && c != '-')
        throw Error(ErrorCode::ParseError, "weight mask for '" + id + "' is invalid");
  }
  entries_ = std::move(entries);
}

BootstrapTable BootstrapTable::prefix(std::size_t k) const {
  BootstrapTable t(seed_, k);
  for (const auto& [id, mask] : entries_) t.entries_[id] = mask.substr(0, k);
  return t;
}

// ---------------------------------------------------------------------------
// Ensemble

Ensemble::Ensemble(EnsembleConfig config, std::vector<RewardModel> members)
    : config_(std::move(config)), members_(std::move(members)),
      weights_(config_.weight_seed, config_.n_members) {
  config_.validate();
  if (members_.size() != config_.n_members)
    throw Error(ErrorCode::InvalidArgument, "member count does not match config");
}

double Ensemble::bootstrap_weight(std::size_t member, const std::string& pair_id) {
  if (member >= members_.size()) throw Error(ErrorCode::InvalidArgument, "member index out of range");
  if (!config_.bootstrap_enabled) return 1.0;
  return weights_.weight(member, pair_id);
}

Ensemble Ensemble::prefix(std::size_t k) const {
  if (k == 0 || k > members_.size())
    throw Error(ErrorCode::InvalidArgument, "invalid ensemble prefix size");
  EnsembleConfig c = config_;
  c.n_members = k;
  c.member_seeds.resize(k);
  Ensemble e(c, std::vector<RewardModel>(members_.begin(), members_.begin() + k));
  e.weights_ = weights_.prefix(k);
  return e;
}

Ensemble init_ensemble(const RewardModel& backbone, const EnsembleConfig& config) {
  config.validate();
  std::vector<RewardModel> members;
  members.reserve(config.n_members);
  for (std::uint64_t seed : config.member_seeds) {
    if (config.init_mode == InitMode::SharedBackbone) {
      RewardModel m = backbone;
      m.reinit_head(derive_seed(seed, "head"));
      members.push_back(std::move(m));
    } else {
      members.emplace_back(backbone.config(), seed);
    }
  }
  return Ensemble(config, std::move(members));
}

Ensemble train_ensemble_pairs(Ensemble ensemble, const PairRefs& pairs,
                              const TrainConfig& train_config) {
  for (std::size_t m = 0; m < ensemble.size(); ++m) {
    WeightFn weights;
    if (ensemble.config().bootstrap_enabled)
      weights = [&](std::size_t i) { return ensemble.bootstrap_weight(m, pairs[i]->pair_id); };
    TrainResult r = train_pairs(ensemble.member(m), pairs, train_config, weights);
    ensemble.member(m) = std::move(r.model);
  }
  return ensemble;
}

Ensemble train_ensemble(Ensemble ensemble, const PreferenceDataset& dataset, Split split,
                        const TrainConfig& train_config) {
  const PairRefs pairs = dataset.labeled(split);
  if (pairs.empty())
    throw Error(ErrorCode::EmptyInput,
                "split '" + std::string(to_string(split)) + "' has no labeled pairs");
  return train_ensemble_pairs(std::move(ensemble), pairs, train_config);
}

// ---------------------------------------------------------------------------
// Prediction

std::vector<double> member_probs(const Ensemble& ensemble, const ComparisonPair& pair) {
  std::vector<double> probs;
  probs.reserve(ensemble.size());
  for (const auto& m : ensemble.members()) probs.push_back(prefer_prob(m, pair));
  return probs;
}

PairPrediction summarize_member_probs(std::span<const double> probs, Aggregation aggregation) {
  const double n = static_cast<double>(probs.size());
  double mean = 0.0;
  bool identical = true;
  for (double p : probs) {
    mean += p;
    identical = identical && p == probs.front();
  }
  // Identical members must give their common value exactly and zero variance.
  mean = identical ? probs.front() : mean / n;
  double var = 0.0;
  for (double p : probs) var += (p - mean) * (p - mean);
  var /= n;

  PairPrediction out{mean, var};
  if (aggregation == Aggregation::MeanLogit) {
    double logit = 0.0;
    for (double p : probs) {
      const double q = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
      logit += std::log(q) - std::log1p(-q);
    }
    out.aggregate = sigmoid(logit / n);
  }
  return out;
}

PairPrediction predict(const Ensemble& ensemble, const ComparisonPair& pair) {
  const auto probs = member_probs(ensemble, pair);
  return summarize_member_probs(probs, ensemble.config().aggregation);
}

double aggregate_prob(const Ensemble& ensemble, const ComparisonPair& pair) {
  return predict(ensemble, pair).aggregate;
}

double epistemic_variance(const Ensemble& ensemble, const ComparisonPair& pair) {
  return predict(ensemble, pair).variance;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

Json manifest_json(const Ensemble& e) {
  const auto& c = e.config();
  return Json{{"schema_version", 1},
              {"kind", "ensemble"},
              {"config",
               {{"n_members", c.n_members},
                {"bootstrap_enabled", c.bootstrap_enabled},
                {"init_mode", to_string(c.init_mode)},
                {"member_seeds", c.member_seeds},
                {"aggregation", to_string(c.aggregation)},
                {"allow_duplicate_seeds", c.allow_duplicate_seeds}}},
              {"weight_seed", c.weight_seed},
              {"weights", e.weights().entries()}};
}

std::string member_file(std::size_t i) {
  std::string n = std::to_string(i);
  if (n.size() < 3) n.insert(0, 3 - n.size(), '0');
  return "member_" + n + ".json";
}

}  // namespace

std::string ensemble_to_string(const Ensemble& ensemble) {
  Json j = manifest_json(ensemble);
  Json members = Json::array();
  for (const auto& m : ensemble.members()) members.push_back(to_json(m));
  j["members"] = std::move(members);
  return j.dump();
}

void save_ensemble(const Ensemble& ensemble, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create '" + dir.string() + "': " + ec.message());
  for (std::size_t i = 0; i < ensemble.size(); ++i)
    save_checkpoint(ensemble.member(i), dir / member_file(i));
  write_text_file((dir / "manifest.json").string(), manifest_json(ensemble).dump(2) + "\n");
}

Ensemble load_ensemble(const fs::path& dir) {
  const Json j = read_json_file((dir / "manifest.json").string());
  try {
    if (j.value("schema_version", 0) != 1 || j.value("kind", "") != "ensemble")
      throw Error(ErrorCode::ParseError, dir.string() + ": not a version-1 ensemble checkpoint");
    const Json& jc = j.at("config");
    EnsembleConfig c;
    c.n_members = jc.at("n_members").get<std::size_t>();
    c.bootstrap_enabled = jc.at("bootstrap_enabled").get<bool>();
    c.init_mode = parse_init_mode(jc.at("init_mode").get<std::string>());
    c.member_seeds = jc.at("member_seeds").get<std::vector<std::uint64_t>>();
    c.aggregation = parse_aggregation(jc.at("aggregation").get<std::string>());
    c.allow_duplicate_seeds = jc.value("allow_duplicate_seeds", false);
    c.weight_seed = j.at("weight_seed").get<std::uint64_t>();
    std::vector<RewardModel> members;
    for (std::size_t i = 0; i < c.n_members; ++i) members.push_back(load_checkpoint(dir / member_file(i)));
    Ensemble e(c, std::move(members));
    e.weights().restore(j.at("weights").get<std::map<std::string, std::string>>());
    return e;
  } catch (const Json::exception& ex) {
    throw Error(ErrorCode::ParseError, dir.string() + ": " + ex.what());
  }
}

}  // namespace preflab
