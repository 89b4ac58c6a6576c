#include "preflab/data.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "preflab/error.hpp"
#include "preflab/json_io.hpp"

namespace preflab {
namespace fs = std::filesystem;

std::string_view to_string(Choice choice) { return choice == Choice::First ? "first" : "second"; }

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
    case Split::Ood: return "ood";
  }
  return "train";
}

Choice parse_choice(std::string_view text) {
  if (text == "first") return Choice::First;
  if (text == "second") return Choice::Second;
  throw Error(ErrorCode::InvalidArgument, "invalid choice '" + std::string(text) + "'");
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "valid") return Split::Valid;
  if (text == "test") return Split::Test;
  if (text == "ood") return Split::Ood;
  throw Error(ErrorCode::InvalidArgument, "invalid split '" + std::string(text) + "'");
}

void NoiseMode::validate() const {
  auto ok = [](double b) { return std::isfinite(b) && b > 0.0; };
  if (kind == Kind::Homoscedastic) {
    if (!ok(beta)) throw Error(ErrorCode::InvalidArgument, "beta must be positive and finite");
  } else if (!ok(beta_low) || !ok(beta_high) || beta_low > beta_high) {
    throw Error(ErrorCode::InvalidArgument, "invalid beta range [beta_low, beta_high]");
  }
}

void SyntheticConfig::validate() const {
  if (d == 0) throw Error(ErrorCode::InvalidArgument, "d must be positive");
  if (truth_hidden == 0) throw Error(ErrorCode::InvalidArgument, "truth_hidden must be positive");
  if (n_train == 0 || n_valid == 0 || n_test == 0 || n_ood == 0) {
    throw Error(ErrorCode::InvalidArgument, "split sizes must be positive");
  }
  if (!std::isfinite(ood_offset) || !std::isfinite(ood_scale) || ood_scale <= 0.0) {
    throw Error(ErrorCode::InvalidArgument, "invalid OOD shift");
  }
  noise.validate();
}

double TrueRewardParams::evaluate(std::span<const double> x) const {
  if (x.size() != d) throw Error(ErrorCode::DimensionMismatch, "feature length != d");
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  double r = 0.0;
  for (std::size_t h = 0; h < hidden; ++h) {
    double z = 0.0;
    for (std::size_t k = 0; k < d; ++k) z += projection[h * d + k] * x[k];
    r += weights[h] * std::tanh(z * scale);
  }
  return r;
}

PairRefs PreferenceDataset::split(Split which) const {
  PairRefs out;
  for (const auto& p : pairs)
    if (p.split == which) out.push_back(&p);
  return out;
}

PairRefs PreferenceDataset::labeled(Split which) const {
  PairRefs out;
  for (const auto& p : pairs)
    if (p.split == which && p.label) out.push_back(&p);
  return out;
}

const ComparisonPair& PreferenceDataset::at(std::string_view pair_id) const {
  for (const auto& p : pairs)
    if (p.pair_id == pair_id) return p;
  throw Error(ErrorCode::NotFound, "unknown pair_id '" + std::string(pair_id) + "'");
}

namespace {

void check_item(const Item& item, std::size_t d, const std::string& pair_id) {
  if (item.features.size() != d) {
    throw Error(ErrorCode::DimensionMismatch,
                "pair '" + pair_id + "': item '" + item.id + "' has " +
                    std::to_string(item.features.size()) + " features, expected " +
                    std::to_string(d));
  }
  for (double f : item.features)
    if (!std::isfinite(f))
      throw Error(ErrorCode::NonFinite, "pair '" + pair_id + "': non-finite feature");
}

}  // namespace

void PreferenceDataset::validate() const {
  std::unordered_set<std::string> ids;
  for (const auto& p : pairs) {
    if (!ids.insert(p.pair_id).second)
      throw Error(ErrorCode::DuplicateId, "duplicate pair_id '" + p.pair_id + "'");
    if (p.first.id == p.second.id)
      throw Error(ErrorCode::InvalidArgument, "pair '" + p.pair_id + "': first.id == second.id");
    check_item(p.first, d, p.pair_id);
    check_item(p.second, d, p.pair_id);
    if (p.beta && !(std::isfinite(*p.beta) && *p.beta > 0.0))
      throw Error(ErrorCode::InvalidArgument, "pair '" + p.pair_id + "': beta must be positive");
  }
  if (ground_truth) {
    for (const auto& p : pairs)
      if (!ground_truth->per_pair_beta.contains(p.pair_id))
        throw Error(ErrorCode::InvalidArgument, "pair '" + p.pair_id + "' has no recorded beta");
  }
}

PairRefs refs(std::span<const ComparisonPair> pairs) {
  PairRefs out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(&p);
  return out;
}

// ---------------------------------------------------------------------------
// JSON

Json to_json(const NoiseMode& noise) {
  if (noise.kind == NoiseMode::Kind::Homoscedastic)
    return Json{{"kind", "homoscedastic"}, {"beta", noise.beta}};
  return Json{{"kind", "heteroscedastic"}, {"beta_low", noise.beta_low}, {"beta_high", noise.beta_high}};
}

NoiseMode noise_from_json(const Json& j) {
  NoiseMode n;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "homoscedastic") {
    n.kind = NoiseMode::Kind::Homoscedastic;
    n.beta = j.at("beta").get<double>();
  } else if (kind == "heteroscedastic") {
    n.kind = NoiseMode::Kind::Heteroscedastic;
    n.beta_low = j.at("beta_low").get<double>();
    n.beta_high = j.at("beta_high").get<double>();
  } else {
    throw Error(ErrorCode::ParseError, "unknown noise kind '" + kind + "'");
  }
  return n;
}

Json to_json(const SyntheticConfig& c) {
  return Json{{"d", c.d},           {"n_train", c.n_train},         {"n_valid", c.n_valid},
              {"n_test", c.n_test}, {"n_ood", c.n_ood},             {"truth_hidden", c.truth_hidden},
              {"noise", to_json(c.noise)}, {"ood_offset", c.ood_offset}, {"ood_scale", c.ood_scale}};
}

SyntheticConfig synthetic_config_from_json(const Json& j) {
  SyntheticConfig c;
  c.d = j.at("d").get<std::size_t>();
  c.n_train = j.at("n_train").get<std::size_t>();
  c.n_valid = j.at("n_valid").get<std::size_t>();
  c.n_test = j.at("n_test").get<std::size_t>();
  c.n_ood = j.at("n_ood").get<std::size_t>();
  c.truth_hidden = j.at("truth_hidden").get<std::size_t>();
  c.noise = noise_from_json(j.at("noise"));
  c.ood_offset = j.at("ood_offset").get<double>();
  c.ood_scale = j.at("ood_scale").get<double>();
  return c;
}

Json to_json(const TrueRewardParams& p) {
  return Json{{"d", p.d}, {"hidden", p.hidden}, {"projection", p.projection}, {"weights", p.weights}};
}

TrueRewardParams true_reward_from_json(const Json& j) {
  TrueRewardParams p;
  p.d = j.at("d").get<std::size_t>();
  p.hidden = j.at("hidden").get<std::size_t>();
  p.projection = j.at("projection").get<std::vector<double>>();
  p.weights = j.at("weights").get<std::vector<double>>();
  if (p.projection.size() != p.d * p.hidden || p.weights.size() != p.hidden)
    throw Error(ErrorCode::ParseError, "true reward parameter shapes do not match");
  return p;
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::NotFound, "cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path + "'");
    out << text;
    out.flush();
    if (!out) throw Error(ErrorCode::IoError, "write failed for '" + path + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot rename into '" + path + "': " + ec.message());
}

// ---------------------------------------------------------------------------
// Files

fs::path manifest_path_for(const fs::path& dataset_path) {
  fs::path p = dataset_path;
  p += ".manifest.json";
  return p;
}

namespace {

void append_item(std::string& out, const Item& item) {
  out += "{\"id\":";
  out += Json(item.id).dump();
  out += ",\"text\":";
  out += item.text ? Json(*item.text).dump() : std::string("null");
  out += ",\"features\":[";
  for (std::size_t i = 0; i < item.features.size(); ++i) {
    if (i) out += ',';
    out += format_double(item.features[i]);
  }
  out += "]}";
}

Item item_from_json(const Json& j) {
  Item item;
  item.id = j.at("id").get<std::string>();
  if (j.contains("text") && !j.at("text").is_null()) item.text = j.at("text").get<std::string>();
  item.features = j.at("features").get<std::vector<double>>();
  return item;
}

ComparisonPair pair_from_json(const Json& j) {
  ComparisonPair p;
  p.pair_id = j.at("pair_id").get<std::string>();
  p.split = parse_split(j.at("split").get<std::string>());
  p.first = item_from_json(j.at("first"));
  p.second = item_from_json(j.at("second"));
  if (j.contains("label") && !j.at("label").is_null())
    p.label = parse_choice(j.at("label").get<std::string>());
  if (j.contains("beta") && !j.at("beta").is_null()) p.beta = j.at("beta").get<double>();
  return p;
}

}  // namespace

std::string dataset_to_jsonl(const PreferenceDataset& dataset) {
  std::string out;
  for (const auto& p : dataset.pairs) {
    out += "{\"pair_id\":";
    out += Json(p.pair_id).dump();
    out += ",\"split\":\"";
    out += to_string(p.split);
    out += "\",\"first\":";
    append_item(out, p.first);
    out += ",\"second\":";
    append_item(out, p.second);
    out += ",\"label\":";
    out += p.label ? "\"" + std::string(to_string(*p.label)) + "\"" : std::string("null");
    out += ",\"beta\":";
    out += p.beta ? format_double(*p.beta) : std::string("null");
    out += "}\n";
  }
  return out;
}

void save_dataset(const PreferenceDataset& dataset, const fs::path& path) {
  Json manifest{{"schema_version", 1}, {"d", dataset.d}};
  if (dataset.origin) {
    manifest["seed"] = dataset.origin->seed;
    manifest["config"] = to_json(dataset.origin->config);
  }
  if (dataset.ground_truth) {
    manifest["ground_truth"] = Json{{"true_reward", to_json(dataset.ground_truth->reward)},
                                    {"noise", to_json(dataset.ground_truth->noise)}};
  }
  write_text_file(path.string(), dataset_to_jsonl(dataset));
  write_text_file(manifest_path_for(path).string(), manifest.dump(2) + "\n");
}

PreferenceDataset load_dataset(const fs::path& path, std::optional<std::size_t> expected_d) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::NotFound, "cannot open dataset '" + path.string() + "'");

  PreferenceDataset ds;
  std::optional<std::size_t> d = expected_d;
  bool has_truth = false;

  const fs::path mpath = manifest_path_for(path);
  if (fs::exists(mpath)) {
    const Json m = read_json_file(mpath.string());
    if (m.value("schema_version", 0) != 1)
      throw Error(ErrorCode::ParseError, mpath.string() + ": unsupported schema_version");
    const auto md = m.at("d").get<std::size_t>();
    if (d && *d != md)
      throw Error(ErrorCode::DimensionMismatch, "manifest d=" + std::to_string(md) +
                                                    " but expected d=" + std::to_string(*d));
    d = md;
    if (m.contains("seed") && m.contains("config"))
      ds.origin = DatasetOrigin{m.at("seed").get<std::uint64_t>(),
                                synthetic_config_from_json(m.at("config"))};
    if (m.contains("ground_truth")) {
      has_truth = true;
      SyntheticTruth truth;
      truth.reward = true_reward_from_json(m.at("ground_truth").at("true_reward"));
      truth.noise = noise_from_json(m.at("ground_truth").at("noise"));
      ds.ground_truth = std::move(truth);
    }
  }

  std::string line;
  std::size_t line_no = 0;
  std::unordered_set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ComparisonPair pair;
    try {
      pair = pair_from_json(Json::parse(line));
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::ParseError, path.string() + ": line " + std::to_string(line_no) +
                                             ": malformed record: " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorCode::ParseError,
                  path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!d) d = pair.first.features.size();
    check_item(pair.first, *d, pair.pair_id);
    check_item(pair.second, *d, pair.pair_id);
    if (!seen.insert(pair.pair_id).second)
      throw Error(ErrorCode::DuplicateId, path.string() + ": line " + std::to_string(line_no) +
                                              ": duplicate pair_id '" + pair.pair_id + "'");
    if (has_truth && pair.beta) ds.ground_truth->per_pair_beta[pair.pair_id] = *pair.beta;
    ds.pairs.push_back(std::move(pair));
  }
  ds.d = d.value_or(0);
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic generation

TrueRewardParams sample_true_reward(std::size_t d, std::size_t hidden, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  TrueRewardParams p;
  p.d = d;
  p.hidden = hidden;
  p.projection.resize(d * hidden);
  for (double& a : p.projection) a = normal(rng);
  p.weights.resize(hidden);
  for (double& w : p.weights) w = normal(rng);
  return p;
}

Choice sample_label(const TrueRewardParams& truth, double beta, const Item& first,
                    const Item& second, Rng& rng) {
  const double delta = truth.evaluate(first.features) - truth.evaluate(second.features);
  const double p_first = 1.0 / (1.0 + std::exp(-beta * delta));
  return uniform01(rng) < p_first ? Choice::First : Choice::Second;
}

double sample_beta(const NoiseMode& noise, Rng& rng) {
  if (noise.kind == NoiseMode::Kind::Homoscedastic) return noise.beta;
  const double lo = std::log(noise.beta_low);
  const double hi = std::log(noise.beta_high);
  return std::exp(lo + (hi - lo) * uniform01(rng));
}

namespace {

struct Streams {
  Rng features;
  Rng betas;
  Rng labels;

  explicit Streams(std::uint64_t seed)
      : features(derive_seed(seed, "features")),
        betas(derive_seed(seed, "beta")),
        labels(derive_seed(seed, "labels")) {}
};

std::string make_id(std::string_view prefix, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return std::string(prefix) + "-" + buf;
}

void append_pairs(PreferenceDataset& ds, SyntheticTruth& truth, Split split, std::size_t count,
                  const OodShift* shift, Streams& streams) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::string prefix(to_string(split));
  auto draw_item = [&](std::string id) {
    Item item;
    item.id = std::move(id);
    item.features.resize(ds.d);
    for (std::size_t k = 0; k < ds.d; ++k) {
      const double z = normal(streams.features);
      item.features[k] = shift ? shift->offset[k] + shift->scale * z : z;
    }
    return item;
  };
  for (std::size_t i = 0; i < count; ++i) {
    ComparisonPair p;
    p.pair_id = make_id(prefix, i);
    p.split = split;
    p.first = draw_item(p.pair_id + "/a");
    p.second = draw_item(p.pair_id + "/b");
    const double beta = sample_beta(truth.noise, streams.betas);
    p.beta = beta;
    p.label = sample_label(truth.reward, beta, p.first, p.second, streams.labels);
    truth.per_pair_beta[p.pair_id] = beta;
    ds.pairs.push_back(std::move(p));
  }
}

}  // namespace

PreferenceDataset generate_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  config.validate();
  PreferenceDataset ds;
  ds.d = config.d;
  ds.origin = DatasetOrigin{seed, config};
  SyntheticTruth truth;
  truth.reward = sample_true_reward(config.d, config.truth_hidden, derive_seed(seed, "truth"));
  truth.noise = config.noise;

  Streams streams(seed);
  append_pairs(ds, truth, Split::Train, config.n_train, nullptr, streams);
  append_pairs(ds, truth, Split::Valid, config.n_valid, nullptr, streams);
  append_pairs(ds, truth, Split::Test, config.n_test, nullptr, streams);
  ds.ground_truth = std::move(truth);

  const OodShift shift{std::vector<double>(config.d, config.ood_offset), config.ood_scale};
  PreferenceDataset ood = make_ood_shift(ds, shift, derive_seed(seed, "ood"), config.n_ood);
  for (auto& p : ood.pairs) {
    ds.ground_truth->per_pair_beta[p.pair_id] = *p.beta;
    ds.pairs.push_back(std::move(p));
  }
  return ds;
}

PreferenceDataset make_ood_shift(const PreferenceDataset& dataset, const OodShift& shift,
                                 std::uint64_t seed, std::size_t count) {
  if (shift.offset.size() != dataset.d)
    throw Error(ErrorCode::DimensionMismatch, "shift offset length " +
                                                  std::to_string(shift.offset.size()) +
                                                  " != d = " + std::to_string(dataset.d));
  if (!(shift.scale > 0.0) || !std::isfinite(shift.scale))
    throw Error(ErrorCode::InvalidArgument, "OOD scale must be positive");
  for (double o : shift.offset)
    if (!std::isfinite(o)) throw Error(ErrorCode::NonFinite, "non-finite OOD offset");
  if (!dataset.ground_truth)
    throw Error(ErrorCode::InvalidArgument, "OOD shift requires a dataset with ground truth");

  PreferenceDataset out;
  out.d = dataset.d;
  SyntheticTruth truth;
  truth.reward = dataset.ground_truth->reward;
  truth.noise = dataset.ground_truth->noise;
  Streams streams(seed);
  append_pairs(out, truth, Split::Ood, count, &shift, streams);
  out.ground_truth = std::move(truth);
  return out;
}

}  // namespace preflab
