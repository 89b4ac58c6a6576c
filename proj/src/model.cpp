#include "preflab/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "preflab/error.hpp"
#include "preflab/json_io.hpp"
#include "preflab/kernels.hpp"

namespace preflab {

std::string_view to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

Activation parse_activation(std::string_view text) {
  if (text == "tanh") return Activation::Tanh;
  if (text == "relu") return Activation::ReLU;
  throw Error(ErrorCode::InvalidArgument, "unknown activation '" + std::string(text) + "'");
}

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "adam") return OptimizerKind::Adam;
  if (text == "sgd") return OptimizerKind::SGD;
  throw Error(ErrorCode::InvalidArgument, "unknown optimizer '" + std::string(text) + "'");
}

void ModelConfig::validate() const {
  if (d == 0) throw Error(ErrorCode::InvalidArgument, "model input dimension must be positive");
  for (std::size_t w : hidden_widths)
    if (w == 0) throw Error(ErrorCode::InvalidArgument, "hidden widths must be positive");
}

// ---------------------------------------------------------------------------
// RewardModel

RewardModel::RewardModel(ModelConfig config, std::uint64_t init_seed)
    : config_(std::move(config)), init_seed_(init_seed) {
  config_.validate();
  build_layout();
  reinit_trunk(derive_seed(init_seed, "trunk"));
  reinit_head(derive_seed(init_seed, "head"));
}

void RewardModel::build_layout() {
  layers_.clear();
  std::size_t offset = 0;
  std::size_t in = config_.d;
  auto add = [&](std::size_t out) {
    LayerShape s;
    s.in = in;
    s.out = out;
    s.weight_offset = offset;
    offset += in * out;
    s.bias_offset = offset;
    offset += out;
    layers_.push_back(s);
    in = out;
  };
  for (std::size_t w : config_.hidden_widths) add(w);
  add(1);
  params_.assign(offset, 0.0);
}

std::size_t RewardModel::trunk_size() const { return layers_.back().weight_offset; }

std::span<const double> RewardModel::trunk_parameters() const {
  return std::span<const double>(params_).first(trunk_size());
}

std::span<double> RewardModel::head_weights() {
  const auto& h = layers_.back();
  return std::span<double>(params_).subspan(h.weight_offset, h.in);
}

std::span<const double> RewardModel::head_weights() const {
  const auto& h = layers_.back();
  return std::span<const double>(params_).subspan(h.weight_offset, h.in);
}

double& RewardModel::head_bias() { return params_[layers_.back().bias_offset]; }
double RewardModel::head_bias() const { return params_[layers_.back().bias_offset]; }

void RewardModel::init_layer(std::size_t layer, Rng& rng) {
  const auto& s = layers_[layer];
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(s.in)));
  for (std::size_t i = 0; i < s.in * s.out; ++i) params_[s.weight_offset + i] = normal(rng);
  for (std::size_t i = 0; i < s.out; ++i) params_[s.bias_offset + i] = 0.0;
}

void RewardModel::reinit_head(std::uint64_t seed) {
  Rng rng(seed);
  init_layer(layers_.size() - 1, rng);
}

void RewardModel::reinit_trunk(std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) init_layer(l, rng);
}

void RewardModel::copy_trunk_from(const RewardModel& other) {
  if (other.config_ != config_)
    throw Error(ErrorCode::InvalidArgument, "backbone config does not match member config");
  std::copy_n(other.params_.begin(), trunk_size(), params_.begin());
}

std::string RewardModel::block_name(std::size_t i) const {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& s = layers_[l];
    const std::string prefix = l + 1 == layers_.size() ? "head" : "layer" + std::to_string(l);
    if (i >= s.weight_offset && i < s.bias_offset) return prefix + ".weight";
    if (i >= s.bias_offset && i < s.bias_offset + s.out) return prefix + ".bias";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Forward / backward

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  return 1.0 - 1.0 / (1.0 + std::exp(x));
}

namespace {

std::size_t activation_size(const RewardModel& m) {
  std::size_t n = 0;
  for (std::size_t w : m.config().hidden_widths) n += w;
  return n;
}

void activate(Activation a, double* z, std::size_t n) {
  if (a == Activation::Tanh) {
    for (std::size_t i = 0; i < n; ++i) z[i] = std::tanh(z[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) z[i] = z[i] > 0.0 ? z[i] : 0.0;
  }
}

// Multiplies delta by the activation derivative expressed through the output.
void activation_backward(Activation a, const double* act, double* delta, std::size_t n) {
  if (a == Activation::Tanh) {
    for (std::size_t i = 0; i < n; ++i) delta[i] *= 1.0 - act[i] * act[i];
  } else {
    for (std::size_t i = 0; i < n; ++i)
      if (!(act[i] > 0.0)) delta[i] = 0.0;
  }
}

// Head output without bias; `acts` receives hidden post-activations.
double forward(const RewardModel& m, const double* x, double* acts) {
  const auto& k = kernels::active();
  const auto& layers = m.layers();
  const double* p = m.parameters().data();
  const double* in = x;
  double* out = acts;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    const auto& s = layers[l];
    k.gemv(p + s.weight_offset, p + s.bias_offset, in, out, s.out, s.in);
    activate(m.config().activation, out, s.out);
    in = out;
    out += s.out;
  }
  const auto& head = layers.back();
  return k.dot(p + head.weight_offset, in, head.in);
}

struct Scratch {
  std::vector<double> delta;
  std::vector<double> prev;
};

// Accumulates d(loss)/d(params) given d(loss)/d(head output) for one item.
void backward(const RewardModel& m, const double* x, const double* acts, double d_out,
              bool include_bias, double* g, Scratch& scratch) {
  const auto& k = kernels::active();
  const auto& layers = m.layers();
  const double* p = m.parameters().data();
  const std::size_t n_hidden = layers.size() - 1;
  const auto& head = layers.back();

  // Offsets of each hidden layer's activations inside `acts`.
  auto act_ptr = [&](std::size_t l) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < l; ++i) off += layers[i].out;
    return acts + off;
  };

  const double* head_in = n_hidden == 0 ? x : act_ptr(n_hidden - 1);
  k.axpy(d_out, head_in, g + head.weight_offset, head.in);
  if (include_bias) g[head.bias_offset] += d_out;
  if (n_hidden == 0) return;

  auto& delta = scratch.delta;
  auto& prev = scratch.prev;
  delta.assign(head.in, 0.0);
  k.axpy(d_out, p + head.weight_offset, delta.data(), head.in);
  activation_backward(m.config().activation, head_in, delta.data(), head.in);

  for (std::size_t l = n_hidden; l-- > 0;) {
    const auto& s = layers[l];
    const double* input = l == 0 ? x : act_ptr(l - 1);
    k.axpy(1.0, delta.data(), g + s.bias_offset, s.out);
    k.ger(delta.data(), input, g + s.weight_offset, s.out, s.in);
    if (l == 0) break;
    prev.assign(s.in, 0.0);
    k.gemv_t(p + s.weight_offset, delta.data(), prev.data(), s.out, s.in);
    activation_backward(m.config().activation, input, prev.data(), s.in);
    delta.swap(prev);
  }
}

void check_features(const RewardModel& m, std::span<const double> x) {
  if (x.size() != m.config().d)
    throw Error(ErrorCode::DimensionMismatch, "item has " + std::to_string(x.size()) +
                                                  " features, model expects " +
                                                  std::to_string(m.config().d));
}

double total_weight(std::span<const ComparisonPair* const> batch, std::span<const double> weights) {
  if (weights.size() != batch.size())
    throw Error(ErrorCode::InvalidArgument, "weights are not aligned with the batch");
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!batch[i]->label)
      throw Error(ErrorCode::InvalidArgument, "pair '" + batch[i]->pair_id + "' is unlabeled");
    if (!std::isfinite(weights[i]) || weights[i] < 0.0)
      throw Error(ErrorCode::InvalidArgument,
                  "pair '" + batch[i]->pair_id + "' has a negative or non-finite weight");
    total += weights[i];
  }
  if (!(total > 0.0)) throw Error(ErrorCode::EmptyInput, "empty effective batch (all weights zero)");
  return total;
}

struct PairTerm {
  double loss;
  double d_delta;  // d(loss)/d(logit difference)
};

PairTerm pair_term(double delta, Choice chosen) {
  const double sign = chosen == Choice::First ? 1.0 : -1.0;
  const double p = sigmoid(sign * delta);
  if (p < kProbClamp) return {-std::log(kProbClamp), 0.0};
  if (p > 1.0 - kProbClamp) return {-std::log(1.0 - kProbClamp), 0.0};
  return {-std::log(p), -sign * (1.0 - p)};
}

}  // namespace

double reward(const RewardModel& model, std::span<const double> features) {
  check_features(model, features);
  std::vector<double> acts(activation_size(model));
  return forward(model, features.data(), acts.data()) + model.head_bias();
}

double reward(const RewardModel& model, const Item& item) { return reward(model, item.features); }

double logit_difference(const RewardModel& model, const ComparisonPair& pair) {
  check_features(model, pair.first.features);
  check_features(model, pair.second.features);
  std::vector<double> acts(activation_size(model));
  const double a = forward(model, pair.first.features.data(), acts.data());
  const double b = forward(model, pair.second.features.data(), acts.data());
  return a - b;
}

double prefer_prob(const RewardModel& model, const ComparisonPair& pair) {
  return sigmoid(logit_difference(model, pair));
}

double nll_loss(const RewardModel& model, std::span<const ComparisonPair* const> batch,
                std::span<const double> weights) {
  const double total = total_weight(batch, weights);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (weights[i] == 0.0) continue;
    loss += weights[i] * pair_term(logit_difference(model, *batch[i]), *batch[i]->label).loss;
  }
  return loss / total;
}

double loss_and_grad(const RewardModel& model, std::span<const ComparisonPair* const> batch,
                     std::span<const double> weights, Gradients& out) {
  const double total = total_weight(batch, weights);
  out.values.assign(model.parameter_count(), 0.0);
  const std::size_t n_act = activation_size(model);
  std::vector<double> acts_a(n_act), acts_b(n_act);
  Scratch scratch;
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (weights[i] == 0.0) continue;
    const ComparisonPair& pair = *batch[i];
    check_features(model, pair.first.features);
    check_features(model, pair.second.features);
    const double a = forward(model, pair.first.features.data(), acts_a.data());
    const double b = forward(model, pair.second.features.data(), acts_b.data());
    const PairTerm t = pair_term(a - b, *pair.label);
    const double w = weights[i] / total;
    loss += weights[i] * t.loss;
    const double d = w * t.d_delta;
    if (d == 0.0) continue;
    backward(model, pair.first.features.data(), acts_a.data(), d, false, out.values.data(), scratch);
    backward(model, pair.second.features.data(), acts_b.data(), -d, false, out.values.data(),
             scratch);
  }
  return loss / total;
}

Gradients grad(const RewardModel& model, std::span<const ComparisonPair* const> batch,
               std::span<const double> weights) {
  Gradients g;
  loss_and_grad(model, batch, weights, g);
  return g;
}

// ---------------------------------------------------------------------------
// Optimizer

OptimizerState OptimizerState::adam(std::size_t n_params, double lr) {
  OptimizerState s;
  s.algorithm = OptimizerKind::Adam;
  s.learning_rate = lr;
  s.first_moment.assign(n_params, 0.0);
  s.second_moment.assign(n_params, 0.0);
  return s;
}

OptimizerState OptimizerState::sgd(double lr) {
  OptimizerState s;
  s.algorithm = OptimizerKind::SGD;
  s.learning_rate = lr;
  return s;
}

void apply_gradient(RewardModel& model, OptimizerState& opt, const Gradients& g) {
  auto params = model.parameters();
  if (g.values.size() != params.size())
    throw Error(ErrorCode::DimensionMismatch, "gradient size does not match model");
  for (std::size_t i = 0; i < g.values.size(); ++i)
    if (!std::isfinite(g.values[i]))
      throw Error(ErrorCode::NonFinite, "non-finite gradient in block " + model.block_name(i));

  const auto& k = kernels::active();
  ++opt.step_count;
  if (opt.algorithm == OptimizerKind::SGD) {
    k.axpy(-opt.learning_rate, g.values.data(), params.data(), params.size());
    return;
  }
  if (opt.first_moment.size() != params.size()) {
    if (!opt.first_moment.empty())
      throw Error(ErrorCode::DimensionMismatch, "optimizer moments do not match model");
    opt.first_moment.assign(params.size(), 0.0);
    opt.second_moment.assign(params.size(), 0.0);
  }
  const double t = static_cast<double>(opt.step_count);
  const kernels::AdamStep step{opt.learning_rate, opt.beta1, opt.beta2, opt.eps,
                               1.0 - std::pow(opt.beta1, t), 1.0 - std::pow(opt.beta2, t)};
  k.adam_update(params.data(), g.values.data(), opt.first_moment.data(), opt.second_moment.data(),
                params.size(), step);
}

double train_step(RewardModel& model, OptimizerState& opt,
                  std::span<const ComparisonPair* const> batch, std::span<const double> weights) {
  Gradients g;
  const double loss = loss_and_grad(model, batch, weights, g);
  apply_gradient(model, opt, g);
  return loss;
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate(bool allow_zero_epochs) const {
  if (!allow_zero_epochs && epochs == 0)
    throw Error(ErrorCode::InvalidArgument, "epochs must be positive");
  if (batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw Error(ErrorCode::InvalidArgument, "learning_rate must be non-negative");
}

namespace {

OptimizerState make_optimizer(const TrainConfig& c, std::size_t n) {
  return c.optimizer == OptimizerKind::Adam ? OptimizerState::adam(n, c.learning_rate)
                                            : OptimizerState::sgd(c.learning_rate);
}

}  // namespace

TrainResult train_pairs(RewardModel model, const PairRefs& pairs, const TrainConfig& config,
                        std::span<const double> weights) {
  if (!weights.empty() && weights.size() != pairs.size())
    throw Error(ErrorCode::InvalidArgument, "weights are not aligned with the training pairs");
  WeightFn fn;
  if (!weights.empty()) fn = [weights](std::size_t i) { return weights[i]; };
  return train_pairs(std::move(model), pairs, config, fn);
}

TrainResult train_pairs(RewardModel model, const PairRefs& pairs, const TrainConfig& config,
                        const WeightFn& weights) {
  config.validate();
  if (pairs.empty()) throw Error(ErrorCode::EmptyInput, "no labeled pairs to train on");

  TrainResult result{std::move(model), {}, {}};
  result.optimizer = make_optimizer(config, result.model.parameter_count());
  const bool weighted = config.apply_weights && static_cast<bool>(weights);

  Rng rng(config.seed);
  std::vector<std::size_t> order(pairs.size());
  PairRefs batch;
  std::vector<double> batch_w;
  Gradients g;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0, weight_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      batch_w.clear();
      double bw = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(pairs[order[i]]);
        batch_w.push_back(weighted ? weights(order[i]) : 1.0);
        bw += batch_w.back();
      }
      if (bw == 0.0) continue;
      const double loss = loss_and_grad(result.model, batch, batch_w, g);
      apply_gradient(result.model, result.optimizer, g);
      ++result.history.steps;
      loss_sum += loss * bw;
      weight_sum += bw;
    }
    result.history.epoch_losses.push_back(weight_sum > 0.0 ? loss_sum / weight_sum : 0.0);
  }
  return result;
}

TrainResult train(RewardModel model, const PreferenceDataset& dataset, Split split,
                  const TrainConfig& config, std::span<const double> weights) {
  const PairRefs pairs = dataset.labeled(split);
  if (pairs.empty())
    throw Error(ErrorCode::EmptyInput,
                "split '" + std::string(to_string(split)) + "' has no labeled pairs");
  return train_pairs(std::move(model), pairs, config, weights);
}

// ---------------------------------------------------------------------------
// Backbone pre-training

namespace {

struct ProxyTask {
  std::vector<const Item*> items;
  std::vector<double> targets;
};

ProxyTask make_proxy_task(const PreferenceDataset& dataset, std::uint64_t seed, double noise) {
  ProxyTask task;
  for (const ComparisonPair* p : dataset.split(Split::Train)) {
    task.items.push_back(&p->first);
    task.items.push_back(&p->second);
  }
  if (task.items.empty()) throw Error(ErrorCode::EmptyInput, "pre-training needs a train split");
  Rng proj_rng(derive_seed(seed, "proxy-projection"));
  std::vector<double> u(dataset.d);
  for (double& x : u) x = standard_normal(proj_rng);
  Rng noise_rng(derive_seed(seed, "proxy-noise"));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dataset.d));
  for (const Item* item : task.items) {
    double y = 0.0;
    for (std::size_t k = 0; k < dataset.d; ++k) y += u[k] * item->features[k];
    task.targets.push_back(y * scale + noise * normal(noise_rng));
  }
  return task;
}

double proxy_loss(const RewardModel& m, const ProxyTask& task) {
  double s = 0.0;
  for (std::size_t i = 0; i < task.items.size(); ++i) {
    const double r = reward(m, *task.items[i]);
    s += (r - task.targets[i]) * (r - task.targets[i]);
  }
  return s / static_cast<double>(task.items.size());
}

}  // namespace

double proxy_task_loss(const RewardModel& model, const PreferenceDataset& dataset,
                       std::uint64_t seed, double target_noise) {
  return proxy_loss(model, make_proxy_task(dataset, seed, target_noise));
}

PretrainResult pretrain_backbone(const PreferenceDataset& dataset, const ModelConfig& config,
                                 std::uint64_t seed, const PretrainConfig& pretrain) {
  if (config.d != dataset.d)
    throw Error(ErrorCode::DimensionMismatch, "model d does not match dataset d");
  if (pretrain.batch_size == 0)
    throw Error(ErrorCode::InvalidArgument, "pre-training batch size must be positive");
  const ProxyTask task = make_proxy_task(dataset, seed, pretrain.target_noise);

  PretrainResult result{RewardModel(config, seed), 0.0, 0.0};
  RewardModel& m = result.model;
  result.initial_loss = proxy_loss(m, task);

  OptimizerState opt = OptimizerState::adam(m.parameter_count(), pretrain.learning_rate);
  Rng rng(derive_seed(seed, "proxy-shuffle"));
  std::vector<std::size_t> order(task.items.size());
  std::vector<double> acts(activation_size(m));
  Scratch scratch;
  Gradients g;
  for (std::size_t epoch = 0; epoch < pretrain.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += pretrain.batch_size) {
      const std::size_t end = std::min(order.size(), start + pretrain.batch_size);
      const double inv_n = 1.0 / static_cast<double>(end - start);
      g.values.assign(m.parameter_count(), 0.0);
      for (std::size_t i = start; i < end; ++i) {
        const Item& item = *task.items[order[i]];
        const double r = forward(m, item.features.data(), acts.data()) + m.head_bias();
        const double d_out = 2.0 * (r - task.targets[order[i]]) * inv_n;
        backward(m, item.features.data(), acts.data(), d_out, true, g.values.data(), scratch);
      }
      apply_gradient(m, opt, g);
    }
  }
  result.final_loss = proxy_loss(m, task);
  m.reinit_head(derive_seed(seed, "head"));
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

Json to_json(const ModelConfig& c) {
  return Json{{"d", c.d}, {"hidden_widths", c.hidden_widths}, {"activation", to_string(c.activation)}};
}

ModelConfig model_config_from_json(const Json& j) {
  ModelConfig c;
  c.d = j.at("d").get<std::size_t>();
  c.hidden_widths = j.at("hidden_widths").get<std::vector<std::size_t>>();
  c.activation = parse_activation(j.at("activation").get<std::string>());
  c.validate();
  return c;
}

Json to_json(const RewardModel& m) {
  Json layers = Json::array();
  const auto p = m.parameters();
  for (const auto& s : m.layers()) {
    layers.push_back(Json{
        {"weight", std::vector<double>(p.begin() + s.weight_offset, p.begin() + s.bias_offset)},
        {"bias", std::vector<double>(p.begin() + s.bias_offset, p.begin() + s.bias_offset + s.out)}});
  }
  return Json{{"schema_version", 1},
              {"kind", "reward_model"},
              {"config", to_json(m.config())},
              {"init_seed", m.init_seed()},
              {"layers", layers}};
}

RewardModel reward_model_from_json(const Json& j) {
  if (j.value("schema_version", 0) != 1 || j.value("kind", "") != "reward_model")
    throw Error(ErrorCode::ParseError, "not a version-1 reward model checkpoint");
  RewardModel m(model_config_from_json(j.at("config")), j.at("init_seed").get<std::uint64_t>());
  const Json& layers = j.at("layers");
  if (layers.size() != m.layers().size())
    throw Error(ErrorCode::ParseError, "checkpoint layer count does not match config");
  auto p = m.parameters();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& s = m.layers()[l];
    const auto w = layers[l].at("weight").get<std::vector<double>>();
    const auto b = layers[l].at("bias").get<std::vector<double>>();
    if (w.size() != s.in * s.out || b.size() != s.out)
      throw Error(ErrorCode::ParseError, "checkpoint layer " + std::to_string(l) + " has wrong shape");
    std::copy(w.begin(), w.end(), p.begin() + s.weight_offset);
    std::copy(b.begin(), b.end(), p.begin() + s.bias_offset);
  }
  for (double x : p)
    if (!std::isfinite(x)) throw Error(ErrorCode::NonFinite, "checkpoint has non-finite parameters");
  return m;
}

Json to_json(const OptimizerState& s) {
  return Json{{"algorithm", to_string(s.algorithm)}, {"step_count", s.step_count},
              {"learning_rate", s.learning_rate},    {"beta1", s.beta1},
              {"beta2", s.beta2},                    {"eps", s.eps},
              {"first_moment", s.first_moment},      {"second_moment", s.second_moment}};
}

OptimizerState optimizer_from_json(const Json& j) {
  OptimizerState s;
  s.algorithm = parse_optimizer(j.at("algorithm").get<std::string>());
  s.step_count = j.at("step_count").get<std::uint64_t>();
  s.learning_rate = j.at("learning_rate").get<double>();
  s.beta1 = j.at("beta1").get<double>();
  s.beta2 = j.at("beta2").get<double>();
  s.eps = j.at("eps").get<double>();
  s.first_moment = j.at("first_moment").get<std::vector<double>>();
  s.second_moment = j.at("second_moment").get<std::vector<double>>();
  return s;
}

std::string checkpoint_to_string(const RewardModel& model) { return to_json(model).dump() + "\n"; }

RewardModel checkpoint_from_string(const std::string& text) {
  try {
    return reward_model_from_json(Json::parse(text));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const RewardModel& model, const std::filesystem::path& path) {
  write_text_file(path.string(), checkpoint_to_string(model));
}

RewardModel load_checkpoint(const std::filesystem::path& path) {
  try {
    return reward_model_from_json(read_json_file(path.string()));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

}  // namespace preflab
