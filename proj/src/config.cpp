#include "preflab/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "preflab/error.hpp"

namespace preflab {

std::string_view to_string(ValueType t) {
  switch (t) {
    case ValueType::Int: return "int";
    case ValueType::Float: return "float";
    case ValueType::Bool: return "bool";
    case ValueType::String: return "string";
    case ValueType::IntList: return "int list";
    case ValueType::FloatList: return "float list";
    case ValueType::StringList: return "string list";
  }
  return "?";
}

const std::vector<KeySpec>& config_schema() {
  using T = ValueType;
  static const std::vector<KeySpec> schema = {
      {"seed", T::Int, 0, "base seed; seeds.* derive from it unless set"},
      {"seeds.data", T::Int, 0, "synthetic data generation"},
      {"seeds.model", T::Int, 0, "backbone initialisation and pretraining"},
      {"seeds.ensemble", T::Int, 0, "member seeds and bootstrap weights"},
      {"seeds.train", T::Int, 0, "shuffle order for offline training"},
      {"seeds.active", T::Int, 0, "pool, label, replay and acquisition streams"},
      {"seeds.oracle", T::Int, 0, "oracle initialisation and shuffling"},
      {"seeds.eval", T::Int, 0, "evaluation subsets, oracle labels and bootstrap CIs"},

      {"data.d", T::Int, 32, "feature dimension"},
      {"data.train_size", T::Int, 8192, ""},
      {"data.valid_size", T::Int, 2048, ""},
      {"data.test_size", T::Int, 2048, ""},
      {"data.ood_size", T::Int, 1024, ""},
      {"data.truth_hidden", T::Int, 16, "hidden width of the true reward"},
      {"data.noise", T::String, "heteroscedastic", "heteroscedastic | homoscedastic"},
      {"data.beta", T::Float, 1.0, "homoscedastic inverse temperature"},
      {"data.beta_low", T::Float, 0.3, "heteroscedastic lower bound (log-uniform)"},
      {"data.beta_high", T::Float, 10.0, "heteroscedastic upper bound"},
      {"data.ood_offset", T::Float, 1.0, ""},
      {"data.ood_scale", T::Float, 1.5, ""},

      {"model.hidden_widths", T::IntList, Json::array({64, 64}), ""},
      {"model.activation", T::String, "tanh", "tanh | relu"},

      {"pretrain.epochs", T::Int, 5, ""},
      {"pretrain.batch_size", T::Int, 32, ""},
      {"pretrain.learning_rate", T::Float, 1e-3, ""},
      {"pretrain.target_noise", T::Float, 0.1, ""},

      {"ensemble.n_members", T::Int, 8, ""},
      {"ensemble.bootstrap_enabled", T::Bool, true, ""},
      {"ensemble.init_mode", T::String, "shared", "shared | independent"},
      {"ensemble.aggregation", T::String, "mean_prob", "mean_prob | mean_logit"},

      {"train.epochs", T::Int, 10, ""},
      {"train.batch_size", T::Int, 32, ""},
      {"train.learning_rate", T::Float, 1e-3, ""},
      {"train.optimizer", T::String, "adam", "adam | sgd"},

      {"active.budget", T::Int, 4096, ""},
      {"active.pool_size", T::Int, 16, ""},
      {"active.replay_epochs", T::Int, 2, ""},
      {"active.eval_every", T::Int, 256, ""},
      {"active.online_batch", T::Int, 1, ""},
      {"active.warm_start", T::Int, 0, ""},
      {"active.replay_batch_size", T::Int, 32, ""},
      {"active.strategy", T::String, "variance", "random | uncertainty | thompson | variance"},
      {"active.thompson_pair_score", T::String, "max_item", "max_item | preferred_item"},
      {"active.eval_split", T::String, "test", ""},
      {"active.optimizer", T::String, "adam", ""},
      {"active.learning_rate", T::Float, 1e-3, ""},
      {"active.labeler", T::String, "dataset", "dataset | oracle"},

      {"compare.strategies", T::StringList, Json::array({"random", "uncertainty", "thompson", "variance"}), ""},
      {"compare.seeds", T::Int, 5, "number of seeds when compare.seed_list is empty"},
      {"compare.seed_list", T::IntList, Json::array(), "explicit seeds"},
      {"compare.threads", T::Int, 0, "0 uses every core"},

      {"oracle.epoch_multiplier", T::Int, 5, "oracle epochs = train.epochs x this"},

      {"eval.split", T::String, "test", ""},
      {"eval.bins", T::Int, 10, ""},
      {"eval.subset_size", T::Int, 1024, "oracle-labeled train pairs per seed"},
      {"eval.ensemble_sizes", T::IntList, Json::array({3, 8, 16}), ""},
      {"eval.seeds", T::Int, 5, "number of seeds when eval.seed_list is empty"},
      {"eval.seed_list", T::IntList, Json::array(), ""},
      {"eval.kl_direction", T::String, "model_oracle", "model_oracle | oracle_model"},
      {"eval.ci_level", T::Float, 0.95, ""},
      {"eval.ci_resamples", T::Int, 10000, ""},
      {"eval.init_modes", T::StringList, Json::array({"independent", "shared"}), "init modes scored by eval-oracle"},
      {"eval.calibration_samples", T::Int, 0, "resampled oracle labels for calibration; 0 uses stored labels"},
  };
  return schema;
}

const KeySpec* find_key(std::string_view key) {
  for (const auto& k : config_schema())
    if (k.key == key) return &k;
  return nullptr;
}

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); }

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const KeySpec& spec_for(std::string_view key) {
  const KeySpec* s = find_key(key);
  if (!s) config_error("unknown config key '" + std::string(key) + "'");
  return *s;
}

[[noreturn]] void type_error(std::string_view key, ValueType t, std::string_view text) {
  config_error("config key '" + std::string(key) + "' expects " + std::string(to_string(t)) +
               ", got '" + std::string(text) + "'");
}

Json parse_scalar(std::string_view key, ValueType t, std::string_view text) {
  text = trim(text);
  switch (t) {
    case ValueType::Int: {
      if (!text.empty() && text[0] == '-') {
        std::int64_t v = 0;
        auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec != std::errc{} || p != text.data() + text.size()) type_error(key, t, text);
        return v;
      }
      std::uint64_t v = 0;
      auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc{} || p != text.data() + text.size()) type_error(key, t, text);
      return v;
    }
    case ValueType::Float: {
      const std::string s(text);
      char* end = nullptr;
      const double v = std::strtod(s.c_str(), &end);
      if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) type_error(key, t, text);
      return v;
    }
    case ValueType::Bool:
      if (text == "true") return true;
      if (text == "false") return false;
      type_error(key, t, text);
    case ValueType::String:
      if (text.size() >= 2 && text.front() == '"') {
        try {
          return Json::parse(text).get<std::string>();
        } catch (const Json::exception&) {
          type_error(key, t, text);
        }
      }
      if (text.empty()) type_error(key, t, text);
      return std::string(text);
    default: break;
  }
  type_error(key, t, text);
}

ValueType element_type(ValueType t) {
  if (t == ValueType::IntList) return ValueType::Int;
  if (t == ValueType::FloatList) return ValueType::Float;
  return ValueType::String;
}

bool is_list(ValueType t) {
  return t == ValueType::IntList || t == ValueType::FloatList || t == ValueType::StringList;
}

bool json_matches(const Json& v, ValueType t) {
  switch (t) {
    case ValueType::Int: return v.is_number_integer();
    case ValueType::Float: return v.is_number();
    case ValueType::Bool: return v.is_boolean();
    case ValueType::String: return v.is_string();
    default:
      if (!v.is_array()) return false;
      for (const auto& e : v)
        if (!json_matches(e, element_type(t))) return false;
      return true;
  }
}

std::string format_value(const Json& v) {
  if (v.is_array()) {
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + format_value(v[i]);
    return out + "]";
  }
  if (v.is_number_float()) return format_double(v.get<double>());
  return v.dump();
}

}  // namespace

Json Config::parse_value(std::string_view key, std::string_view text) {
  const KeySpec& spec = spec_for(key);
  if (!is_list(spec.type)) return parse_scalar(key, spec.type, text);
  text = trim(text);
  if (!text.empty() && text.front() == '[') {
    if (text.back() != ']') type_error(key, spec.type, text);
    text = trim(text.substr(1, text.size() - 2));
  }
  Json out = Json::array();
  if (text.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    out.push_back(parse_scalar(key, element_type(spec.type), text.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::map<std::string, Json> Config::parse_text(std::string_view text, const std::string& source) {
  std::map<std::string, Json> out;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    const auto hash = line.find('#');
    // '#' inside a quoted string is kept.
    if (hash != std::string_view::npos && line.substr(0, hash).find('"') == std::string_view::npos)
      line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) config_error(where + "expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    try {
      out[key] = parse_value(key, line.substr(eq + 1));
    } catch (const Error& e) {
      config_error(where + e.what());
    }
  }
  return out;
}

Config Config::defaults() {
  Config c;
  for (const auto& k : config_schema()) c.values_[k.key] = k.default_value;
  c.derive_seeds();
  return c;
}

void Config::set(const std::string& key, Json value) {
  const KeySpec& spec = spec_for(key);
  if (!json_matches(value, spec.type)) type_error(key, spec.type, value.dump());
  if (spec.type == ValueType::Float) value = value.get<double>();
  values_[key] = std::move(value);
  explicit_.insert(key);
}

void Config::set_text(const std::string& key, std::string_view text) { set(key, parse_value(key, text)); }

void Config::demote_defaults() {
  for (const auto& k : config_schema())
    if (k.key.rfind("seeds.", 0) != 0 && values_.at(k.key) == k.default_value) explicit_.erase(k.key);
}

void Config::derive_seeds() {
  const std::uint64_t base = get_seed("seed");
  for (const auto& k : config_schema()) {
    if (k.key.rfind("seeds.", 0) != 0 || is_explicit(k.key)) continue;
    values_[k.key] = derive_seed(base, std::string_view(k.key).substr(6));
  }
}

const Json& Config::get(std::string_view key) const {
  auto it = values_.find(std::string(key));
  if (it == values_.end()) config_error("config key '" + std::string(key) + "' is not set");
  return it->second;
}

std::int64_t Config::get_int(std::string_view key) const {
  const Json& v = get(key);
  if (v.is_number_unsigned() && v.get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX))
    config_error("config key '" + std::string(key) + "' is out of range");
  return v.get<std::int64_t>();
}

std::size_t Config::get_size(std::string_view key) const {
  const std::int64_t v = get_int(key);
  if (v < 0) config_error("config key '" + std::string(key) + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

std::uint64_t Config::get_seed(std::string_view key) const {
  const Json& v = get(key);
  if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
    config_error("config key '" + std::string(key) + "' must be non-negative");
  return v.get<std::uint64_t>();
}

double Config::get_double(std::string_view key) const { return get(key).get<double>(); }
bool Config::get_bool(std::string_view key) const { return get(key).get<bool>(); }
std::string Config::get_string(std::string_view key) const { return get(key).get<std::string>(); }

std::vector<std::size_t> Config::get_size_list(std::string_view key) const {
  std::vector<std::size_t> out;
  for (const auto& v : get(key)) {
    if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
      config_error("config key '" + std::string(key) + "' must hold non-negative integers");
    out.push_back(v.get<std::size_t>());
  }
  return out;
}

std::vector<std::string> Config::get_string_list(std::string_view key) const {
  return get(key).get<std::vector<std::string>>();
}

std::string Config::to_text() const {
  std::string out;
  for (const auto& k : config_schema()) out += k.key + " = " + format_value(get(k.key)) + "\n";
  return out;
}

Json Config::to_json() const {
  Json j = Json::object();
  for (const auto& [k, v] : values_) j[k] = v;
  return j;
}

std::uint64_t Config::hash() const { return fnv1a64(to_text()); }

Config resolve_config(const std::optional<std::filesystem::path>& file,
                      const std::vector<std::pair<std::string, std::string>>& overrides) {
  Config c = Config::defaults();
  if (file) {
    std::ifstream in(*file, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open config file '" + file->string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    for (auto& [k, v] : Config::parse_text(ss.str(), file->string())) c.set(k, std::move(v));
  }
  for (const auto& [k, v] : overrides) c.set_text(k, v);
  c.derive_seeds();
  return c;
}

Config config_from_json(const Json& j) {
  if (!j.is_object()) config_error("resolved config must be a JSON object");
  Config c = Config::defaults();
  for (const auto& [k, v] : j.items()) c.set(k, v);
  // A record cannot tell an explicit default from an implicit one.
  c.demote_defaults();
  // Every seed is present in a resolved record; nothing is re-derived.
  c.derive_seeds();
  return c;
}

// ---------------------------------------------------------------------------
// Typed views

namespace {

template <typename F>
auto checked(std::string_view key, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, "config key '" + std::string(key) + "': " + e.what());
  }
}

std::size_t positive(const Config& c, std::string_view key) {
  const std::size_t v = c.get_size(key);
  if (v == 0) config_error("config key '" + std::string(key) + "' must be at least 1");
  return v;
}

double positive_float(const Config& c, std::string_view key) {
  const double v = c.get_double(key);
  if (!(v > 0.0)) config_error("config key '" + std::string(key) + "' must be positive");
  return v;
}

std::vector<std::uint64_t> seed_list(const Config& c, const std::string& prefix, std::uint64_t base) {
  std::vector<std::uint64_t> out;
  for (auto s : c.get_size_list(prefix + ".seed_list")) out.push_back(s);
  if (!out.empty()) return out;
  const std::size_t n = positive(c, prefix + ".seeds");
  for (std::size_t i = 0; i < n; ++i) out.push_back(derive_seed(base, i));
  return out;
}

}  // namespace

SyntheticConfig synthetic_config(const Config& c) {
  SyntheticConfig s;
  s.d = positive(c, "data.d");
  s.n_train = positive(c, "data.train_size");
  s.n_valid = positive(c, "data.valid_size");
  s.n_test = positive(c, "data.test_size");
  s.n_ood = positive(c, "data.ood_size");
  s.truth_hidden = positive(c, "data.truth_hidden");
  const std::string noise = c.get_string("data.noise");
  if (noise == "heteroscedastic")
    s.noise.kind = NoiseMode::Kind::Heteroscedastic;
  else if (noise == "homoscedastic")
    s.noise.kind = NoiseMode::Kind::Homoscedastic;
  else
    config_error("config key 'data.noise': unknown noise mode '" + noise + "'");
  s.noise.beta = c.get_double("data.beta");
  s.noise.beta_low = c.get_double("data.beta_low");
  s.noise.beta_high = c.get_double("data.beta_high");
  checked("data.noise", [&] { s.noise.validate(); return 0; });
  s.ood_offset = c.get_double("data.ood_offset");
  s.ood_scale = positive_float(c, "data.ood_scale");
  return s;
}

ModelConfig model_config(const Config& c, std::size_t d) {
  ModelConfig m;
  m.d = d;
  m.hidden_widths = c.get_size_list("model.hidden_widths");
  m.activation = checked("model.activation", [&] { return parse_activation(c.get_string("model.activation")); });
  checked("model.hidden_widths", [&] { m.validate(); return 0; });
  return m;
}

PretrainConfig pretrain_config(const Config& c) {
  PretrainConfig p;
  p.epochs = c.get_size("pretrain.epochs");
  p.batch_size = positive(c, "pretrain.batch_size");
  p.learning_rate = positive_float(c, "pretrain.learning_rate");
  p.target_noise = c.get_double("pretrain.target_noise");
  if (p.target_noise < 0.0) config_error("config key 'pretrain.target_noise' must be non-negative");
  return p;
}

EnsembleConfig ensemble_config(const Config& c) {
  EnsembleConfig e = EnsembleConfig::with_members(positive(c, "ensemble.n_members"), c.get_seed("seeds.ensemble"));
  e.bootstrap_enabled = c.get_bool("ensemble.bootstrap_enabled");
  e.init_mode = checked("ensemble.init_mode", [&] { return parse_init_mode(c.get_string("ensemble.init_mode")); });
  e.aggregation =
      checked("ensemble.aggregation", [&] { return parse_aggregation(c.get_string("ensemble.aggregation")); });
  return e;
}

TrainConfig train_config(const Config& c) {
  TrainConfig t;
  t.epochs = c.get_size("train.epochs");
  t.batch_size = positive(c, "train.batch_size");
  t.learning_rate = positive_float(c, "train.learning_rate");
  t.optimizer = checked("train.optimizer", [&] { return parse_optimizer(c.get_string("train.optimizer")); });
  t.seed = c.get_seed("seeds.train");
  return t;
}

ActiveConfig active_config(const Config& c) {
  ActiveConfig a;
  a.budget = positive(c, "active.budget");
  a.pool_size = positive(c, "active.pool_size");
  a.replay_epochs = c.get_size("active.replay_epochs");
  a.eval_every = positive(c, "active.eval_every");
  a.online_batch = positive(c, "active.online_batch");
  a.warm_start = c.get_size("active.warm_start");
  a.replay_batch_size = positive(c, "active.replay_batch_size");
  a.strategy.kind = checked("active.strategy", [&] { return parse_strategy(c.get_string("active.strategy")); });
  a.strategy.thompson_pair_score = checked("active.thompson_pair_score", [&] {
    return parse_thompson_score(c.get_string("active.thompson_pair_score"));
  });
  a.eval_split = checked("active.eval_split", [&] { return parse_split(c.get_string("active.eval_split")); });
  a.optimizer = checked("active.optimizer", [&] { return parse_optimizer(c.get_string("active.optimizer")); });
  a.learning_rate = positive_float(c, "active.learning_rate");
  checked("active.labeler", [&] { return parse_labeler_kind(c.get_string("active.labeler")); });
  a.derive_seeds(c.get_seed("seeds.active"));
  return a;
}

std::vector<AcquisitionStrategy> compare_strategies_list(const Config& c) {
  std::vector<AcquisitionStrategy> out;
  const std::string score = c.get_string("active.thompson_pair_score");
  for (const auto& name : c.get_string_list("compare.strategies")) {
    AcquisitionStrategy s;
    s.kind = checked("compare.strategies", [&] { return parse_strategy(name); });
    s.thompson_pair_score = checked("active.thompson_pair_score", [&] { return parse_thompson_score(score); });
    out.push_back(s);
  }
  if (out.empty()) config_error("config key 'compare.strategies' must not be empty");
  return out;
}

CompareConfig compare_config(const Config& c, std::size_t d) {
  CompareConfig cc;
  cc.active = active_config(c);
  cc.model = model_config(c, d);
  const EnsembleConfig e = ensemble_config(c);
  cc.n_members = e.n_members;
  cc.bootstrap_enabled = e.bootstrap_enabled;
  cc.init_mode = e.init_mode;
  cc.aggregation = e.aggregation;
  cc.seeds = seed_list(c, "compare", c.get_seed("seeds.active"));
  if (cc.seeds.size() < 2) config_error("config key 'compare.seeds' must give at least 2 seeds");
  cc.ci_level = c.get_double("eval.ci_level");
  if (!(cc.ci_level > 0.0 && cc.ci_level < 1.0)) config_error("config key 'eval.ci_level' must be in (0, 1)");
  cc.ci_resamples = positive(c, "eval.ci_resamples");
  cc.threads = c.get_size("compare.threads");
  return cc;
}

OracleConfig oracle_config(const Config& c, std::size_t d) {
  OracleConfig o;
  o.model = model_config(c, d);
  o.train = train_config(c);
  o.epoch_multiplier = positive(c, "oracle.epoch_multiplier");
  o.seed = c.get_seed("seeds.oracle");
  return o;
}

OracleExperimentConfig oracle_experiment_config(const Config& c, std::size_t d) {
  OracleExperimentConfig x;
  x.model = model_config(c, d);
  x.member_train = train_config(c);
  x.subset_size = positive(c, "eval.subset_size");
  x.eval_split = checked("eval.split", [&] { return parse_split(c.get_string("eval.split")); });
  x.ensemble_sizes = c.get_size_list("eval.ensemble_sizes");
  if (x.ensemble_sizes.empty()) config_error("config key 'eval.ensemble_sizes' must not be empty");
  for (auto s : x.ensemble_sizes)
    if (s == 0) config_error("config key 'eval.ensemble_sizes' must hold positive sizes");
  x.bootstrap_enabled = c.get_bool("ensemble.bootstrap_enabled");
  x.init_mode = checked("ensemble.init_mode", [&] { return parse_init_mode(c.get_string("ensemble.init_mode")); });
  x.seeds = seed_list(c, "eval", c.get_seed("seeds.eval"));
  x.direction = checked("eval.kl_direction", [&] { return parse_kl_direction(c.get_string("eval.kl_direction")); });
  x.ci_level = c.get_double("eval.ci_level");
  if (!(x.ci_level > 0.0 && x.ci_level < 1.0)) config_error("config key 'eval.ci_level' must be in (0, 1)");
  x.ci_resamples = positive(c, "eval.ci_resamples");
  return x;
}

}  // namespace preflab
