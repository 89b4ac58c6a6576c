#include <algorithm>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "preflab/active_loop.hpp"
#include "preflab/error.hpp"

using namespace preflab;

namespace {

ModelConfig tiny_model(std::size_t d = 8) {
  ModelConfig c;
  c.d = d;
  c.hidden_widths = {8};
  return c;
}

Ensemble tiny_ensemble(std::size_t n = 3, std::uint64_t seed = 1, std::size_t d = 8) {
  EnsembleConfig ec = EnsembleConfig::with_members(n, seed);
  ec.init_mode = InitMode::IndependentInit;
  return init_ensemble(RewardModel(tiny_model(d), 0), ec);
}

ActiveConfig small_active(std::size_t budget, std::string_view strategy = "variance") {
  ActiveConfig a;
  a.budget = budget;
  a.pool_size = 8;
  a.eval_every = 50;
  a.strategy.kind = parse_strategy(strategy);
  a.derive_seeds(42);
  return a;
}

// One-feature linear ensemble with head weight `w` on every member.
Ensemble linear(double w) {
  ModelConfig c;
  c.d = 1;
  c.hidden_widths = {};
  EnsembleConfig ec = EnsembleConfig::with_members(2, 1);
  Ensemble e = init_ensemble(RewardModel(c, 0), ec);
  for (std::size_t i = 0; i < 2; ++i) e.member(i).head_weights()[0] = w;
  return e;
}

PreferenceDataset four_pair_fixture() {
  PreferenceDataset ds;
  ds.d = 1;
  // gaps +1, +2, -1, +0.5 with labels First, First, Second, Second: three agree with w > 0
  const std::pair<double, Choice> rows[] = {
      {1.0, Choice::First}, {2.0, Choice::First}, {-1.0, Choice::Second}, {0.5, Choice::Second}};
  int i = 0;
  for (const auto& [gap, label] : rows) {
    auto p = fixtures::make_pair("t" + std::to_string(i++), {gap}, {0.0}, label);
    p.split = Split::Test;
    ds.pairs.push_back(p);
  }
  return ds;
}

}  // namespace

TEST_SUITE("active_loop") {

TEST_CASE("full budget acquires distinct pairs from each pool") {
  const auto ds = fixtures::small_dataset(1, 8, 4200);
  ActiveConfig cfg = small_active(4096);
  cfg.pool_size = 16;
  cfg.eval_every = 256;
  Labeler labeler = Labeler::dataset_labels();
  const ActiveResult r = run_active(ds, tiny_ensemble(), labeler, cfg);
  REQUIRE(r.log.records.size() == 4096);
  std::set<std::string> chosen;
  for (const auto& rec : r.log.records) {
    chosen.insert(rec.chosen);
    REQUIRE(rec.chosen_index < rec.pool.size());
    CHECK(rec.pool[rec.chosen_index] == rec.chosen);
  }
  CHECK(chosen.size() == 4096);
  CHECK(r.log.labeler_calls_online == 4096);
  CHECK(r.log.labeler_calls_replay == 0);
  CHECK(r.log.bootstrap_draws_replay == 0);
  // 4096 / 256 online snapshots minus the one at the budget, plus the final one
  CHECK(r.log.snapshots.size() == 16);
  CHECK(r.log.snapshots.back().phase == "final");
  CHECK(r.log.snapshots.back().step == 4096);
}

TEST_CASE("replay keeps bootstrap weights and calls no labeler") {
  const auto ds = fixtures::small_dataset(2, 8, 300);
  ActiveLearner learner(ds, tiny_ensemble(), small_active(120), LabelerKind::DatasetLabels);
  while (!learner.online_complete()) {
    const Query q = learner.propose();
    learner.apply_label(q, *q.chosen()->label);
  }
  const auto weights = learner.ensemble().weights().entries();
  const std::size_t draws = learner.ensemble().weights().draws();
  learner.finish();
  CHECK(learner.finished());
  CHECK(learner.ensemble().weights().entries() == weights);
  CHECK(learner.ensemble().weights().draws() == draws);
  CHECK(learner.log().replay_steps > 0);
  CHECK(learner.acquired().size() == 120);
}

TEST_CASE("single forced choice") {
  const auto ds = fixtures::small_dataset(3, 8, 64);
  for (std::string_view s : {"random", "uncertainty", "thompson", "variance"}) {
    ActiveConfig cfg = small_active(1, s);
    cfg.pool_size = 1;
    Labeler labeler = Labeler::dataset_labels();
    const ActiveResult r = run_active(ds, tiny_ensemble(), labeler, cfg);
    REQUIRE(r.log.records.size() == 1);
    CHECK(r.log.records[0].pool.size() == 1);
    CHECK(r.log.records[0].chosen == r.log.records[0].pool[0]);
  }
}

TEST_CASE("runs are deterministic given the seeds") {
  const auto ds = fixtures::small_dataset(4, 8, 300);
  for (std::string_view s : {"random", "thompson"}) {
    Labeler l1 = Labeler::dataset_labels(), l2 = Labeler::dataset_labels();
    const ActiveResult a = run_active(ds, tiny_ensemble(), l1, small_active(100, s));
    const ActiveResult b = run_active(ds, tiny_ensemble(), l2, small_active(100, s));
    CHECK(a.log == b.log);
    CHECK(a.ensemble == b.ensemble);
    CHECK(runlog_jsonl(a.log) == runlog_jsonl(b.log));
  }
}

TEST_CASE("oracle labeler samples labels from the oracle") {
  const auto ds = fixtures::small_dataset(5, 8, 200);
  const RewardModel oracle(tiny_model(), 9);
  Labeler labeler = Labeler::oracle_sampler(oracle, 3);
  const ActiveResult r = run_active(ds, tiny_ensemble(), labeler, small_active(60));
  CHECK(r.log.labeler == LabelerKind::OracleSampler);
  CHECK(r.log.records.size() == 60);
  CHECK_THROWS_AS(Labeler::human_session(nullptr), Error);
}

TEST_CASE("human abort stops the run") {
  const auto ds = fixtures::small_dataset(6, 8, 200);
  int n = 0;
  Labeler labeler = Labeler::human_session([&](const ComparisonPair& p) -> std::optional<Choice> {
    if (++n > 10) return std::nullopt;
    return p.label;
  });
  try {
    run_active(ds, tiny_ensemble(), labeler, small_active(50));
    FAIL("expected abort");
  } catch (const ActiveAborted& e) {
    CHECK(e.labeled() == 10);
  }
}

TEST_CASE("configuration errors") {
  const auto ds = fixtures::small_dataset(7, 8, 64);
  ActiveConfig zero = small_active(0);
  CHECK_THROWS_AS(ActiveLearner(ds, tiny_ensemble(), zero, LabelerKind::DatasetLabels), Error);
  ActiveConfig big = small_active(65);
  CHECK_THROWS_AS(ActiveLearner(ds, tiny_ensemble(), big, LabelerKind::DatasetLabels), Error);
  ActiveConfig wide = small_active(10);
  wide.pool_size = 100;
  CHECK_THROWS_AS(ActiveLearner(ds, tiny_ensemble(), wide, LabelerKind::DatasetLabels), Error);

  ActiveLearner learner(ds, tiny_ensemble(), small_active(2), LabelerKind::DatasetLabels);
  Query q = learner.propose();
  Query stale = q;
  learner.apply_label(q, Choice::First);
  CHECK_THROWS_AS(learner.apply_label(stale, Choice::First), Error);
  CHECK_THROWS_AS(learner.finish(), Error);
}

TEST_CASE("snapshot accuracy conventions") {
  const PreferenceDataset ds = four_pair_fixture();
  CHECK(evaluate_snapshot(linear(1.0), ds, Split::Test) == 0.75);
  CHECK(evaluate_snapshot(linear(0.0), ds, Split::Test) == 0.5);

  PreferenceDataset perfect = ds;
  perfect.pairs[3].label = Choice::First;
  CHECK(evaluate_snapshot(linear(1.0), perfect, Split::Test) == 1.0);
  CHECK_THROWS_AS(evaluate_snapshot(linear(1.0), ds, Split::Valid), Error);
}

TEST_CASE("strategy comparison structure and degenerate intervals") {
  const auto ds = fixtures::small_dataset(8, 8, 300);
  CompareConfig cc;
  cc.active = small_active(100);
  cc.model = tiny_model();
  cc.n_members = 2;
  cc.seeds = {3, 3};
  cc.ci_resamples = 500;
  cc.threads = 1;
  const std::vector<AcquisitionStrategy> strategies{{StrategyKind::Random}, {StrategyKind::Variance}};
  const StrategyReport rep = compare_strategies(ds, strategies, cc);
  const std::size_t snapshots = rep.runs[0][0].snapshots.size();
  CHECK(snapshots == 2);  // online at step 50, then the final one at the budget
  CHECK(rep.rows.size() == strategies.size() * snapshots);
  for (const auto& row : rep.rows) {
    CHECK(row.ci_lo == row.mean_accuracy);
    CHECK(row.ci_hi == row.mean_accuracy);
  }
  const std::string csv = strategy_report_csv(rep);
  CHECK(csv.rfind("strategy,step,mean_accuracy,ci_lo,ci_hi\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == long(rep.rows.size() + 1));
  cc.seeds = {3};
  CHECK_THROWS_AS(compare_strategies(ds, strategies, cc), Error);
}

TEST_CASE("runlog files") {
  const auto dir = fixtures::tmp_dir("runlog");
  const auto ds = fixtures::small_dataset(9, 8, 200);
  Labeler labeler = Labeler::dataset_labels();
  const ActiveResult r = run_active(ds, tiny_ensemble(), labeler, small_active(30));
  write_runlog(r.log, dir);
  const std::string body = fixtures::slurp(dir / "runlog.jsonl");
  CHECK(body == runlog_jsonl(r.log));
  const Json summary = Json::parse(fixtures::slurp(dir / "summary.json"));
  CHECK(summary["kind"] == "runlog");
  CHECK(summary["schema_version"] == 1);
  CHECK(active_config_from_json(to_json(r.log.config)) == r.log.config);
  for (const auto& rec : r.log.records) CHECK(acquisition_record_from_json(to_json(rec)) == rec);
}

}  // TEST_SUITE
