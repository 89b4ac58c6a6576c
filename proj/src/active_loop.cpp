#include "preflab/active_loop.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

namespace preflab {
namespace fs = std::filesystem;

std::string_view to_string(LabelerKind k) {
  switch (k) {
    case LabelerKind::DatasetLabels: return "dataset";
    case LabelerKind::OracleSampler: return "oracle";
    case LabelerKind::HumanSession: return "human";
  }
  return "dataset";
}

LabelerKind parse_labeler_kind(std::string_view text) {
  if (text == "dataset") return LabelerKind::DatasetLabels;
  if (text == "oracle") return LabelerKind::OracleSampler;
  if (text == "human") return LabelerKind::HumanSession;
  throw Error(ErrorCode::InvalidArgument, "unknown labeler '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Labeler

Labeler Labeler::dataset_labels() { return Labeler{}; }

Labeler Labeler::oracle_sampler(RewardModel oracle, std::uint64_t seed) {
  Labeler l;
  l.kind_ = LabelerKind::OracleSampler;
  l.oracle_ = std::move(oracle);
  l.rng_.seed(seed);
  return l;
}

Labeler Labeler::human_session(HumanFn fn) {
  if (!fn) throw Error(ErrorCode::InvalidArgument, "human labeler needs a callback");
  Labeler l;
  l.kind_ = LabelerKind::HumanSession;
  l.human_ = std::move(fn);
  return l;
}

std::optional<Choice> Labeler::label(const ComparisonPair& pair) {
  ++calls_;
  switch (kind_) {
    case LabelerKind::DatasetLabels:
      if (!pair.label)
        throw Error(ErrorCode::InvalidArgument, "pair '" + pair.pair_id + "' has no stored label");
      return pair.label;
    case LabelerKind::OracleSampler: {
      if (!oracle_) throw Error(ErrorCode::InvalidArgument, "oracle labeler has no oracle");
      const double p = std::clamp(prefer_prob(*oracle_, pair), kProbClamp, 1.0 - kProbClamp);
      return uniform01(rng_) < p ? Choice::First : Choice::Second;
    }
    case LabelerKind::HumanSession: return human_(pair);
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Config

void ActiveConfig::derive_seeds(std::uint64_t base) {
  pool_seed = derive_seed(base, "pool");
  label_seed = derive_seed(base, "label");
  train_seed = derive_seed(base, "train");
  acquisition_seed = derive_seed(base, "acquisition");
}

void ActiveConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw Error(ErrorCode::InvalidArgument, std::string(name) + " must be at least 1");
  };
  positive(budget, "budget");
  positive(pool_size, "pool_size");
  positive(eval_every, "eval_every");
  positive(online_batch, "online_batch");
  positive(replay_batch_size, "replay_batch_size");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw Error(ErrorCode::InvalidArgument, "learning_rate must be positive");
}

// ---------------------------------------------------------------------------
// Engine

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double pair_nll(const RewardModel& m, const ComparisonPair& pair) {
  const ComparisonPair* batch[] = {&pair};
  const double w[] = {1.0};
  return nll_loss(m, batch, w);
}

}  // namespace

ActiveLearner::ActiveLearner(const PreferenceDataset& dataset, Ensemble ensemble,
                             ActiveConfig config, LabelerKind labeler_kind)
    : dataset_(&dataset), ensemble_(std::move(ensemble)), config_(std::move(config)),
      pool_rng_(config_.pool_seed), acquisition_rng_(config_.acquisition_seed),
      replay_rng_(derive_seed(config_.train_seed, "replay")) {
  config_.validate();
  if (ensemble_.size() == 0) throw Error(ErrorCode::InvalidArgument, "ensemble is not initialised");
  unlabeled_ = labeler_kind == LabelerKind::DatasetLabels ? dataset.labeled(Split::Train)
                                                          : dataset.split(Split::Train);
  if (unlabeled_.size() < config_.budget)
    throw Error(ErrorCode::InvalidArgument,
                "unlabeled train pool has " + std::to_string(unlabeled_.size()) +
                    " pairs, fewer than the budget of " + std::to_string(config_.budget));
  if (unlabeled_.size() < config_.pool_size)
    throw Error(ErrorCode::InvalidArgument, "pool_size exceeds the unlabeled train pool");
  for (std::size_t m = 0; m < ensemble_.size(); ++m) {
    const std::size_t n = ensemble_.member(m).parameter_count();
    optimizers_.push_back(config_.optimizer == OptimizerKind::Adam
                              ? OptimizerState::adam(n, config_.learning_rate)
                              : OptimizerState::sgd(config_.learning_rate));
  }
  log_.config = config_;
  log_.labeler = labeler_kind;
  log_.records.reserve(config_.budget);
}

Query ActiveLearner::propose() {
  if (online_complete()) throw Error(ErrorCode::Conflict, "budget exhausted");
  if (unlabeled_.empty()) throw Error(ErrorCode::EmptyInput, "unlabeled pool exhausted");
  const auto t0 = Clock::now();
  // Partial Fisher-Yates over the unlabeled remainder: the first k slots form the pool.
  const std::size_t k = std::min(config_.pool_size, unlabeled_.size());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + uniform_index(pool_rng_, unlabeled_.size() - i);
    std::swap(unlabeled_[i], unlabeled_[j]);
  }
  Query q;
  q.step = labeled() + 1;
  q.pool.assign(unlabeled_.begin(), unlabeled_.begin() + static_cast<std::ptrdiff_t>(k));
  if (labeled() < config_.warm_start)
    q.chosen_index = uniform_index(acquisition_rng_, k);
  else
    q.chosen_index = select(config_.strategy, ensemble_, q.pool, acquisition_rng_);
  last_pool_ = q.pool;
  log_.timings.online_seconds += seconds_since(t0);
  return q;
}

void ActiveLearner::update(std::span<const ComparisonPair* const> batch) {
  std::vector<double> w(batch.size());
  for (std::size_t m = 0; m < ensemble_.size(); ++m) {
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      w[i] = ensemble_.bootstrap_weight(m, batch[i]->pair_id);
      total += w[i];
    }
    if (total == 0.0) continue;
    train_step(ensemble_.member(m), optimizers_[m], batch, w);
  }
}

const AcquisitionRecord& ActiveLearner::apply_label(const Query& query, Choice label) {
  if (online_complete()) throw Error(ErrorCode::Conflict, "budget exhausted");
  if (query.step != labeled() + 1)
    throw Error(ErrorCode::Conflict, "query for step " + std::to_string(query.step) +
                                         " is stale; expected step " + std::to_string(labeled() + 1));
  const ComparisonPair* chosen = query.chosen();
  auto it = std::find(unlabeled_.begin(), unlabeled_.end(), chosen);
  if (it == unlabeled_.end())
    throw Error(ErrorCode::Conflict, "pair '" + chosen->pair_id + "' is not in the unlabeled pool");
  const auto t0 = Clock::now();
  *it = unlabeled_.back();
  unlabeled_.pop_back();

  ComparisonPair& stored = acquired_.emplace_back(*chosen);
  stored.label = label;

  AcquisitionRecord rec;
  rec.step = query.step;
  for (const auto* p : query.pool) rec.pool.push_back(p->pair_id);
  rec.chosen = chosen->pair_id;
  rec.chosen_index = query.chosen_index;
  rec.label = label;
  for (const auto& m : ensemble_.members()) rec.member_losses.push_back(pair_nll(m, stored));
  rec.variance_before = epistemic_variance(ensemble_, stored);

  pending_batch_.push_back(&stored);
  const bool last = query.step == config_.budget;
  if (pending_batch_.size() >= config_.online_batch || last) {
    update(pending_batch_);
    pending_batch_.clear();
    rec.updated = true;
  }
  rec.variance_after = epistemic_variance(ensemble_, stored);
  log_.records.push_back(std::move(rec));
  log_.bootstrap_draws_online = ensemble_.weights().draws();
  log_.timings.online_seconds += seconds_since(t0);

  if (labeled() % config_.eval_every == 0 && !online_complete()) take_snapshot("online");
  return log_.records.back();
}

void ActiveLearner::take_snapshot(std::string phase) {
  const auto t0 = Clock::now();
  Snapshot s;
  s.step = labeled();
  s.phase = std::move(phase);
  s.split = config_.eval_split;
  s.accuracy = evaluate_snapshot(ensemble_, *dataset_, config_.eval_split);
  log_.snapshots.push_back(std::move(s));
  log_.timings.eval_seconds += seconds_since(t0);
}

void ActiveLearner::finish() {
  if (finished_) return;
  if (!online_complete()) throw Error(ErrorCode::Conflict, "online phase is not complete");
  const auto t0 = Clock::now();
  const std::size_t draws_before = ensemble_.weights().draws();
  std::vector<const ComparisonPair*> order;
  for (const auto& p : acquired_) order.push_back(&p);
  std::vector<const ComparisonPair*> batch;
  for (std::size_t epoch = 0; epoch < config_.replay_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), replay_rng_);
    for (std::size_t start = 0; start < order.size(); start += config_.replay_batch_size) {
      const std::size_t end = std::min(order.size(), start + config_.replay_batch_size);
      batch.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                   order.begin() + static_cast<std::ptrdiff_t>(end));
      update(batch);
      ++log_.replay_steps;
    }
  }
  log_.bootstrap_draws_replay = ensemble_.weights().draws() - draws_before;
  log_.timings.replay_seconds += seconds_since(t0);
  take_snapshot("final");
  finished_ = true;
}

double ActiveLearner::mean_last_pool_variance() const {
  if (last_pool_.empty()) return 0.0;
  double s = 0.0;
  for (const auto* p : last_pool_) s += epistemic_variance(ensemble_, *p);
  return s / static_cast<double>(last_pool_.size());
}

// ---------------------------------------------------------------------------

ActiveResult run_active(const PreferenceDataset& dataset, Ensemble ensemble, Labeler& labeler,
                        const ActiveConfig& config) {
  ActiveLearner learner(dataset, std::move(ensemble), config, labeler.kind());
  const std::size_t calls0 = labeler.calls();
  while (!learner.online_complete()) {
    Query q = learner.propose();
    const auto label = labeler.label(*q.chosen());
    if (!label) throw ActiveAborted(learner.labeled());
    learner.apply_label(q, *label);
  }
  const std::size_t calls1 = labeler.calls();
  learner.finish();
  learner.log().labeler_calls_online = calls1 - calls0;
  learner.log().labeler_calls_replay = labeler.calls() - calls1;
  return {learner.ensemble(), std::move(learner.log())};
}

double accuracy_of(const Ensemble& ensemble, const PairRefs& pairs) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyInput, "no labeled pairs to evaluate");
  double correct = 0.0;
  for (const auto* p : pairs) {
    if (!p->label) throw Error(ErrorCode::InvalidArgument, "pair '" + p->pair_id + "' is unlabeled");
    const double q = aggregate_prob(ensemble, *p);
    if (q == 0.5)
      correct += 0.5;
    else if ((q > 0.5) == (*p->label == Choice::First))
      correct += 1.0;
  }
  return correct / static_cast<double>(pairs.size());
}

double evaluate_snapshot(const Ensemble& ensemble, const PreferenceDataset& dataset, Split split) {
  const PairRefs pairs = dataset.labeled(split);
  if (pairs.empty())
    throw Error(ErrorCode::EmptyInput,
                "split '" + std::string(to_string(split)) + "' has no labeled pairs");
  return accuracy_of(ensemble, pairs);
}

// ---------------------------------------------------------------------------
// Strategy comparison

StrategyReport compare_strategies(const PreferenceDataset& dataset,
                                  const std::vector<AcquisitionStrategy>& strategies,
                                  const CompareConfig& config, const RewardModel* backbone,
                                  const RewardModel* oracle) {
  if (strategies.empty()) throw Error(ErrorCode::InvalidArgument, "no strategies to compare");
  if (config.seeds.size() < 2) throw Error(ErrorCode::InvalidArgument, "compare needs at least 2 seeds");
  if (config.init_mode == InitMode::SharedBackbone && !backbone)
    throw Error(ErrorCode::InvalidArgument, "shared-backbone ensembles need a backbone");
  const std::size_t n_seeds = config.seeds.size();
  const std::size_t cells = strategies.size() * n_seeds;

  StrategyReport report;
  report.runs.assign(strategies.size(), std::vector<RunLog>(n_seeds));
  std::vector<std::exception_ptr> errors(cells);

  auto run_cell = [&](std::size_t cell) {
    const std::size_t s = cell / n_seeds, k = cell % n_seeds;
    const std::uint64_t seed = config.seeds[k];
    ActiveConfig ac = config.active;
    ac.strategy = strategies[s];
    ac.derive_seeds(derive_seed(seed, "active"));
    EnsembleConfig ec = EnsembleConfig::with_members(config.n_members, derive_seed(seed, "ensemble"));
    ec.bootstrap_enabled = config.bootstrap_enabled;
    ec.init_mode = config.init_mode;
    ec.aggregation = config.aggregation;
    const RewardModel shape = backbone ? *backbone : RewardModel(config.model, derive_seed(seed, "backbone"));
    Labeler labeler = oracle ? Labeler::oracle_sampler(*oracle, ac.label_seed) : Labeler::dataset_labels();
    report.runs[s][k] = run_active(dataset, init_ensemble(shape, ec), labeler, ac).log;
  };

  std::size_t threads = config.threads ? config.threads : std::thread::hardware_concurrency();
  threads = std::clamp<std::size_t>(threads, 1, cells);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c = next++; c < cells; c = next++) {
      try {
        run_cell(c);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (std::size_t s = 0; s < strategies.size(); ++s) {
    const std::string name(to_string(strategies[s].kind));
    const auto& first = report.runs[s][0].snapshots;
    for (std::size_t j = 0; j < first.size(); ++j) {
      std::vector<double> acc;
      for (const auto& run : report.runs[s]) acc.push_back(run.snapshots.at(j).accuracy);
      StrategyRow row;
      row.strategy = name;
      row.step = first[j].step;
      row.mean_accuracy = std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
      const Interval ci = bootstrap_ci(acc, config.ci_level, config.ci_resamples,
                                       derive_seed(derive_seed(row.step, name), j));
      row.ci_lo = ci.lo;
      row.ci_hi = ci.hi;
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

std::string strategy_report_csv(const StrategyReport& report) {
  std::string out = "strategy,step,mean_accuracy,ci_lo,ci_hi\n";
  for (const auto& r : report.rows)
    out += r.strategy + "," + std::to_string(r.step) + "," + format_double(r.mean_accuracy) + "," +
           format_double(r.ci_lo) + "," + format_double(r.ci_hi) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

Json to_json(const ActiveConfig& c) {
  return Json{{"budget", c.budget},
              {"pool_size", c.pool_size},
              {"replay_epochs", c.replay_epochs},
              {"eval_every", c.eval_every},
              {"online_batch", c.online_batch},
              {"warm_start", c.warm_start},
              {"replay_batch_size", c.replay_batch_size},
              {"strategy", to_string(c.strategy.kind)},
              {"thompson_pair_score", to_string(c.strategy.thompson_pair_score)},
              {"eval_split", to_string(c.eval_split)},
              {"optimizer", to_string(c.optimizer)},
              {"learning_rate", c.learning_rate},
              {"seeds",
               {{"pool", c.pool_seed},
                {"label", c.label_seed},
                {"train", c.train_seed},
                {"acquisition", c.acquisition_seed}}}};
}

ActiveConfig active_config_from_json(const Json& j) {
  try {
    ActiveConfig c;
    c.budget = j.at("budget").get<std::size_t>();
    c.pool_size = j.at("pool_size").get<std::size_t>();
    c.replay_epochs = j.at("replay_epochs").get<std::size_t>();
    c.eval_every = j.at("eval_every").get<std::size_t>();
    c.online_batch = j.value("online_batch", std::size_t{1});
    c.warm_start = j.value("warm_start", std::size_t{0});
    c.replay_batch_size = j.value("replay_batch_size", std::size_t{32});
    c.strategy.kind = parse_strategy(j.at("strategy").get<std::string>());
    c.strategy.thompson_pair_score = parse_thompson_score(j.value("thompson_pair_score", "max_item"));
    c.eval_split = parse_split(j.value("eval_split", "test"));
    c.optimizer = parse_optimizer(j.value("optimizer", "adam"));
    c.learning_rate = j.value("learning_rate", 1e-3);
    const Json& s = j.at("seeds");
    c.pool_seed = s.at("pool").get<std::uint64_t>();
    c.label_seed = s.at("label").get<std::uint64_t>();
    c.train_seed = s.at("train").get<std::uint64_t>();
    c.acquisition_seed = s.at("acquisition").get<std::uint64_t>();
    return c;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("active config: ") + e.what());
  }
}

Json to_json(const AcquisitionRecord& r) {
  return Json{{"step", r.step},
              {"pool", r.pool},
              {"chosen", r.chosen},
              {"chosen_index", r.chosen_index},
              {"label", to_string(r.label)},
              {"member_losses", r.member_losses},
              {"variance_before", r.variance_before},
              {"variance_after", r.variance_after},
              {"updated", r.updated}};
}

AcquisitionRecord acquisition_record_from_json(const Json& j) {
  try {
    AcquisitionRecord r;
    r.step = j.at("step").get<std::size_t>();
    r.pool = j.at("pool").get<std::vector<std::string>>();
    r.chosen = j.at("chosen").get<std::string>();
    r.chosen_index = j.at("chosen_index").get<std::size_t>();
    r.label = parse_choice(j.at("label").get<std::string>());
    r.member_losses = j.at("member_losses").get<std::vector<double>>();
    r.variance_before = j.at("variance_before").get<double>();
    r.variance_after = j.at("variance_after").get<double>();
    r.updated = j.at("updated").get<bool>();
    return r;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("acquisition record: ") + e.what());
  }
}

Json to_json(const Snapshot& s) {
  return Json{{"step", s.step}, {"phase", s.phase}, {"split", to_string(s.split)}, {"accuracy", s.accuracy}};
}

Json runlog_summary(const RunLog& log) {
  Json snaps = Json::array();
  for (const auto& s : log.snapshots) snaps.push_back(to_json(s));
  return Json{{"schema_version", 1},
              {"kind", "runlog"},
              {"config", to_json(log.config)},
              {"labeler", to_string(log.labeler)},
              {"acquisitions", log.records.size()},
              {"snapshots", std::move(snaps)},
              {"labeler_calls_online", log.labeler_calls_online},
              {"labeler_calls_replay", log.labeler_calls_replay},
              {"bootstrap_draws_online", log.bootstrap_draws_online},
              {"bootstrap_draws_replay", log.bootstrap_draws_replay},
              {"replay_steps", log.replay_steps}};
}

std::string runlog_jsonl(const RunLog& log) {
  std::string out;
  for (const auto& r : log.records) out += to_json(r).dump() + "\n";
  return out;
}

void write_runlog(const RunLog& log, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create '" + dir.string() + "': " + ec.message());
  write_text_file((dir / "runlog.jsonl").string(), runlog_jsonl(log));
  write_text_file((dir / "summary.json").string(), runlog_summary(log).dump(2) + "\n");
}

}  // namespace preflab
