#include "preflab/cli.hpp"

#include <atomic>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "preflab/active_loop.hpp"
#include "preflab/config.hpp"
#include "preflab/error.hpp"
#include "preflab/kernels.hpp"
#include "preflab/service.hpp"

namespace preflab {
namespace fs = std::filesystem;

namespace {

std::string utc_now(const char* fmt) {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::strftime(buf, sizeof buf, fmt, &tm);
  return buf;
}

std::string hex8(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%08llx", static_cast<unsigned long long>(h & 0xffffffffULL));
  return buf;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string opt_str(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

// Options shared by every subcommand.
struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::string runs_dir = "runs";
  std::string from_manifest;
  std::string seed;
};

// A flag that maps onto one config key.
struct KeyFlag {
  std::string key;
  std::string value;
  CLI::Option* option = nullptr;
};

struct Command {
  std::string name;
  CLI::App* app = nullptr;
  Common common;
  std::vector<std::unique_ptr<KeyFlag>> flags;
  std::map<std::string, std::string> inputs;  // role -> path, filled by input flags
  std::map<std::string, CLI::Option*> input_opts;
  std::vector<std::string> run_inputs;  // export-plots
  std::string out_path;
  // serve
  std::string host = "127.0.0.1";
  int port = -1;
  std::string data_dir;
  std::string token;

  void key_flag(const std::string& flag, const std::string& key, const std::string& help) {
    auto f = std::make_unique<KeyFlag>();
    f->key = key;
    f->option = app->add_option(flag, f->value, help + " (" + key + ")");
    flags.push_back(std::move(f));
  }
  void input(const std::string& flag, const std::string& role, const std::string& help) {
    input_opts[role] = app->add_option(flag, inputs[role], help);
  }
};

struct RunContext {
  std::string command;
  Config config;
  std::map<std::string, std::string> inputs;
  fs::path dir;
  std::vector<std::string> artifacts;
  Json timings = Json::object();
  Json extra = Json::object();
  std::string started_at;

  fs::path artifact(const std::string& name) {
    artifacts.push_back(name);
    return dir / name;
  }

  bool has(const std::string& role) const {
    auto it = inputs.find(role);
    return it != inputs.end() && !it->second.empty();
  }
  fs::path input(const std::string& role) const {
    if (!has(role)) throw Error(ErrorCode::InvalidArgument, "missing required input --" + role);
    return inputs.at(role);
  }

  void write_manifest(const std::string& status, const std::optional<Error>& error = std::nullopt) const {
    Json seeds = Json::object();
    for (const auto& [k, v] : config.values())
      if (k == "seed" || k.rfind("seeds.", 0) == 0) seeds[k] = v;
    Json m{{"schema_version", 1},
           {"kind", "run_manifest"},
           {"command", command},
           {"status", status},
           {"inputs", inputs},
           {"config", config.to_json()},
           {"config_hash", hex8(config.hash())},
           {"seeds", seeds},
           {"schema_versions", {{"manifest", 1}, {"dataset", 1}, {"checkpoint", 1}, {"ensemble", 1}, {"runlog", 1}}},
           {"kernels", kernels::active().name},
           {"started_at", started_at},
           {"finished_at", status == "running" ? Json(nullptr) : Json(utc_now("%Y-%m-%dT%H:%M:%SZ"))},
           {"artifacts", artifacts},
           {"timings", timings}};
    if (!extra.empty()) m["details"] = extra;
    if (error) m["error"] = {{"code", to_string(error->code())}, {"message", error->what()}};
    write_text_file((dir / "manifest.json").string(), m.dump(2) + "\n");
  }
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---------------------------------------------------------------------------
// Shared model plumbing

ModelConfig model_for(const RunContext& ctx, const PreferenceDataset& ds) { return model_config(ctx.config, ds.d); }

RewardModel backbone_for(RunContext& ctx, const PreferenceDataset& ds, InitMode mode) {
  const ModelConfig mc = model_for(ctx, ds);
  if (ctx.has("backbone")) {
    RewardModel b = load_checkpoint(ctx.input("backbone"));
    if (!(b.config() == mc))
      throw Error(ErrorCode::DimensionMismatch, "backbone architecture does not match model.* settings");
    return b;
  }
  if (mode == InitMode::SharedBackbone) {
    const auto t0 = Clock::now();
    auto r = pretrain_backbone(ds, mc, ctx.config.get_seed("seeds.model"), pretrain_config(ctx.config));
    ctx.timings["pretrain_seconds"] = seconds_since(t0);
    save_checkpoint(r.model, ctx.artifact("backbone.json"));
    return r.model;
  }
  return RewardModel(mc, ctx.config.get_seed("seeds.model"));
}

RewardModel oracle_for(RunContext& ctx, const PreferenceDataset& ds) {
  if (ctx.has("oracle")) return load_checkpoint(ctx.input("oracle"));
  const auto t0 = Clock::now();
  RewardModel o = train_oracle(ds, oracle_config(ctx.config, ds.d));
  ctx.timings["oracle_seconds"] = seconds_since(t0);
  save_checkpoint(o, ctx.artifact("oracle.json"));
  return o;
}

PreferenceDataset data_for(const RunContext& ctx) {
  PreferenceDataset ds = load_dataset(ctx.input("data"));
  const std::size_t d = ctx.config.get_size("data.d");
  if (ctx.config.is_explicit("data.d") && d != ds.d)
    throw Error(ErrorCode::DimensionMismatch,
                "config key 'data.d' is " + std::to_string(d) + " but the dataset has d=" + std::to_string(ds.d));
  return ds;
}

// ---------------------------------------------------------------------------
// Commands

void cmd_gen_data(RunContext& ctx, const Command& cmd) {
  const SyntheticConfig sc = synthetic_config(ctx.config);
  const PreferenceDataset ds = generate_synthetic(sc, ctx.config.get_seed("seeds.data"));
  save_dataset(ds, ctx.artifact("data.jsonl"));
  ctx.artifacts.push_back("data.jsonl.manifest.json");
  if (!cmd.out_path.empty()) save_dataset(ds, cmd.out_path);
  ctx.extra["pairs"] = ds.pairs.size();
}

void cmd_pretrain(RunContext& ctx, const Command&) {
  const PreferenceDataset ds = data_for(ctx);
  const auto t0 = Clock::now();
  const auto r = pretrain_backbone(ds, model_for(ctx, ds), ctx.config.get_seed("seeds.model"), pretrain_config(ctx.config));
  ctx.timings["pretrain_seconds"] = seconds_since(t0);
  save_checkpoint(r.model, ctx.artifact("backbone.json"));
  const Json j{{"initial_proxy_loss", r.initial_loss}, {"final_proxy_loss", r.final_loss}};
  write_text_file(ctx.artifact("pretrain.json").string(), j.dump(2) + "\n");
}

Json split_accuracies(const Ensemble& e, const PreferenceDataset& ds) {
  Json j = Json::object();
  for (Split s : {Split::Train, Split::Valid, Split::Test, Split::Ood})
    if (!ds.labeled(s).empty()) j[std::string(to_string(s))] = evaluate_snapshot(e, ds, s);
  return j;
}

void cmd_train(RunContext& ctx, const Command&) {
  const PreferenceDataset ds = data_for(ctx);
  const EnsembleConfig ec = ensemble_config(ctx.config);
  Ensemble e = init_ensemble(backbone_for(ctx, ds, ec.init_mode), ec);
  const auto t0 = Clock::now();
  e = train_ensemble(std::move(e), ds, Split::Train, train_config(ctx.config));
  ctx.timings["train_seconds"] = seconds_since(t0);
  save_ensemble(e, ctx.artifact("ensemble"));
  Json members = Json::array();
  for (std::size_t m = 0; m < e.size(); ++m) members.push_back(split_accuracies(replicate_model(e.member(m), 1), ds));
  const Json j{{"accuracy", split_accuracies(e, ds)}, {"member_accuracy", members}};
  write_text_file(ctx.artifact("metrics.json").string(), j.dump(2) + "\n");
}

std::string curve_csv(const RunLog& log) {
  std::string out = "step,phase,split,accuracy\n";
  for (const auto& s : log.snapshots)
    out += std::to_string(s.step) + "," + s.phase + "," + std::string(to_string(s.split)) + "," +
           format_double(s.accuracy) + "\n";
  return out;
}

void cmd_active(RunContext& ctx, const Command&) {
  const PreferenceDataset ds = data_for(ctx);
  const ActiveConfig ac = active_config(ctx.config);
  const EnsembleConfig ec = ensemble_config(ctx.config);
  const LabelerKind kind = parse_labeler_kind(ctx.config.get_string("active.labeler"));
  if (kind == LabelerKind::HumanSession)
    throw Error(ErrorCode::ConfigError, "config key 'active.labeler': human labeling runs through 'serve'");
  Labeler labeler = kind == LabelerKind::OracleSampler ? Labeler::oracle_sampler(oracle_for(ctx, ds), ac.label_seed)
                                                       : Labeler::dataset_labels();
  Ensemble e = init_ensemble(backbone_for(ctx, ds, ec.init_mode), ec);
  ActiveResult r = run_active(ds, std::move(e), labeler, ac);
  ctx.timings["online_seconds"] = r.log.timings.online_seconds;
  ctx.timings["replay_seconds"] = r.log.timings.replay_seconds;
  ctx.timings["eval_seconds"] = r.log.timings.eval_seconds;
  write_runlog(r.log, ctx.dir);
  ctx.artifacts.push_back("runlog.jsonl");
  ctx.artifacts.push_back("summary.json");
  write_text_file(ctx.artifact("curve.csv").string(), curve_csv(r.log));
  save_ensemble(r.ensemble, ctx.artifact("ensemble"));
  ctx.extra["acquisitions"] = r.log.records.size();
}

void cmd_compare(RunContext& ctx, const Command&) {
  const PreferenceDataset ds = data_for(ctx);
  const CompareConfig cc = compare_config(ctx.config, ds.d);
  const auto strategies = compare_strategies_list(ctx.config);
  std::optional<RewardModel> backbone, oracle;
  if (cc.init_mode == InitMode::SharedBackbone || ctx.has("backbone")) backbone = backbone_for(ctx, ds, cc.init_mode);
  if (parse_labeler_kind(ctx.config.get_string("active.labeler")) == LabelerKind::OracleSampler)
    oracle = oracle_for(ctx, ds);
  const auto t0 = Clock::now();
  const StrategyReport rep = compare_strategies(ds, strategies, cc, backbone ? &*backbone : nullptr,
                                                oracle ? &*oracle : nullptr);
  ctx.timings["compare_seconds"] = seconds_since(t0);
  write_text_file(ctx.artifact("compare.csv").string(), strategy_report_csv(rep));
  Json runs = Json::array();
  for (std::size_t s = 0; s < strategies.size(); ++s)
    for (std::size_t k = 0; k < cc.seeds.size(); ++k) {
      Json r = runlog_summary(rep.runs[s][k]);
      r["seed"] = cc.seeds[k];
      runs.push_back(std::move(r));
    }
  write_text_file(ctx.artifact("compare.json").string(), Json{{"seeds", cc.seeds}, {"runs", runs}}.dump(2) + "\n");
}

void cmd_eval_calibration(RunContext& ctx, const Command&) {
  const PreferenceDataset ds = data_for(ctx);
  Ensemble e;
  if (ctx.has("ensemble"))
    e = load_ensemble(ctx.input("ensemble"));
  else if (ctx.has("model"))
    e = replicate_model(load_checkpoint(ctx.input("model")), 1);
  else
    throw Error(ErrorCode::InvalidArgument, "eval-calibration needs --ensemble or --model");
  const Split split = parse_split(ctx.config.get_string("eval.split"));
  const std::size_t samples = ctx.config.get_size("eval.calibration_samples");
  std::vector<Prediction> preds;
  if (samples == 0) {
    preds = ensemble_predictions(e, ds.labeled(split));
  } else {
    // Labels drawn from the model's own probabilities, cycling over the split.
    const PairRefs pairs = ds.split(split);
    if (pairs.empty()) throw Error(ErrorCode::EmptyInput, "split has no pairs");
    std::vector<double> probs;
    for (const auto* p : pairs) probs.push_back(aggregate_prob(e, *p));
    Rng rng(ctx.config.get_seed("seeds.eval"));
    for (std::size_t i = 0; i < samples; ++i) {
      const double p = probs[i % probs.size()];
      preds.push_back(to_prediction(p, uniform01(rng) < p ? Choice::First : Choice::Second));
    }
  }
  CalibrationReport rep = calibration_curve(preds, ctx.config.get_size("eval.bins"));
  rep.split = std::string(to_string(split));
  std::string csv = "bin,confidence_lo,confidence_hi,count,mean_confidence,mean_accuracy\n";
  Json bins = Json::array();
  for (std::size_t b = 0; b < rep.bins.size(); ++b) {
    const auto& bin = rep.bins[b];
    csv += std::to_string(b + 1) + "," + format_double(bin.confidence_lo) + "," + format_double(bin.confidence_hi) +
           "," + std::to_string(bin.count) + "," + opt_str(bin.mean_confidence) + "," + opt_str(bin.mean_accuracy) +
           "\n";
    bins.push_back({{"confidence_lo", bin.confidence_lo},
                    {"confidence_hi", bin.confidence_hi},
                    {"count", bin.count},
                    {"mean_confidence", bin.mean_confidence ? Json(*bin.mean_confidence) : Json(nullptr)},
                    {"mean_accuracy", bin.mean_accuracy ? Json(*bin.mean_accuracy) : Json(nullptr)}});
  }
  write_text_file(ctx.artifact("calibration.csv").string(), csv);
  const Json j{{"split", rep.split}, {"ece", rep.ece}, {"total", rep.total}, {"bins", bins},
               {"self_sampled", samples > 0}};
  write_text_file(ctx.artifact("calibration.json").string(), j.dump(2) + "\n");
}

Json interval_json(const std::optional<Interval>& ci) {
  return ci ? Json{{"lo", ci->lo}, {"hi", ci->hi}} : Json(nullptr);
}

void cmd_eval_oracle(RunContext& ctx, const Command&) {
  const PreferenceDataset ds = data_for(ctx);
  const RewardModel oracle = oracle_for(ctx, ds);
  OracleExperimentConfig base = oracle_experiment_config(ctx.config, ds.d);
  const PairRefs eval_pairs = ds.split(base.eval_split);

  // Degenerate reference: the oracle against itself.
  const std::size_t n_rep = ctx.config.get_size("ensemble.n_members");
  const auto self = uncertainty_quality(replicate_model(oracle, n_rep), oracle, eval_pairs, base.direction);
  double max_kl = 0.0;
  for (const auto& p : self.points) max_kl = std::max(max_kl, p.kl_error);

  Json modes = Json::object();
  std::string csv = "kind,init_mode,seed,ensemble_size,pair_id,kl_error,variance,spearman_r\n";
  std::map<std::string, OracleExperimentResult> results;
  for (const auto& mode_name : ctx.config.get_string_list("eval.init_modes")) {
    OracleExperimentConfig x = base;
    x.init_mode = parse_init_mode(mode_name);
    std::optional<RewardModel> bb;
    if (x.init_mode == InitMode::SharedBackbone) bb = backbone_for(ctx, ds, x.init_mode);
    const auto t0 = Clock::now();
    const OracleExperimentResult r = run_oracle_experiment(ds, oracle, x, bb ? &*bb : nullptr);
    ctx.timings[mode_name + "_seconds"] = seconds_since(t0);
    Json sizes = Json::array();
    for (const auto& s : r.sizes) {
      Json per_seed = Json::array();
      for (const auto& sr : r.seeds) {
        const auto& q = sr.by_size.at(s.ensemble_size);
        per_seed.push_back(q.spearman_r ? Json(*q.spearman_r) : Json(nullptr));
        for (const auto& p : q.points)
          csv += "point," + mode_name + "," + std::to_string(sr.seed) + "," + std::to_string(s.ensemble_size) + "," +
                 p.pair_id + "," + format_double(p.kl_error) + "," + format_double(p.variance) + ",\n";
        csv += "summary," + mode_name + "," + std::to_string(sr.seed) + "," + std::to_string(s.ensemble_size) +
               ",,,," + opt_str(q.spearman_r) + "\n";
      }
      sizes.push_back({{"ensemble_size", s.ensemble_size},
                       {"mean_spearman_r", s.mean_r ? Json(*s.mean_r) : Json(nullptr)},
                       {"ci", interval_json(s.ci)},
                       {"defined_seeds", s.defined_seeds},
                       {"per_seed", per_seed}});
    }
    Json dis = Json::array();
    for (const auto& sr : r.seeds) dis.push_back(sr.disagreement);
    modes[mode_name] = {{"sizes", sizes}, {"mean_disagreement", r.mean_disagreement}, {"per_seed_disagreement", dis}};
    results.emplace(mode_name, r);
  }
  write_text_file(ctx.artifact("uncertainty.csv").string(), csv);

  Json j{{"kl_direction", to_string(base.direction)},
         {"eval_split", to_string(base.eval_split)},
         {"seeds", base.seeds},
         {"bootstrap_enabled", base.bootstrap_enabled},
         {"modes", modes},
         {"replicated_oracle",
          {{"members", n_rep},
           {"max_kl", max_kl},
           {"spearman_r", self.spearman_r ? Json(*self.spearman_r) : Json(nullptr)}}}};
  if (results.count("shared") && results.count("independent")) {
    const auto& sh = results.at("shared");
    const auto& in = results.at("independent");
    Json by_size = Json::array();
    for (std::size_t i = 0; i < sh.sizes.size(); ++i) {
      const auto &a = sh.sizes[i].ci, &b = in.sizes[i].ci;
      const bool overlap = !a || !b || (a->lo <= b->hi && b->lo <= a->hi);
      by_size.push_back({{"ensemble_size", sh.sizes[i].ensemble_size}, {"cis_overlap", overlap},
                         {"advisory", overlap}});
    }
    j["diversity"] = {{"shared_disagreement", sh.mean_disagreement},
                      {"independent_disagreement", in.mean_disagreement},
                      {"shared_strictly_lower", sh.mean_disagreement < in.mean_disagreement},
                      {"spearman_comparison", by_size}};
  }
  write_text_file(ctx.artifact("oracle_summary.json").string(), j.dump(2) + "\n");
}

std::atomic<HttpService*> g_service{nullptr};

extern "C" void stop_on_signal(int) {
  if (HttpService* s = g_service.load()) s->stop();
}

void cmd_serve(RunContext& ctx, const Command& cmd) {
  ServiceOptions opt;
  const char* env_dir = std::getenv("PREFLAB_DATA_DIR");
  opt.data_dir = !cmd.data_dir.empty() ? cmd.data_dir : env_dir ? env_dir : ".";
  const char* env_token = std::getenv("PREFLAB_TOKEN");
  if (!cmd.token.empty())
    opt.bearer_token = cmd.token;
  else if (env_token && *env_token)
    opt.bearer_token = env_token;
  int port = cmd.port;
  if (port < 0) {
    const char* env_port = std::getenv("PREFLAB_PORT");
    port = env_port ? std::atoi(env_port) : 8080;
  }
  SessionManager manager(opt);
  HttpService http(manager);
  g_service = &http;
  std::signal(SIGINT, stop_on_signal);
  std::signal(SIGTERM, stop_on_signal);
  ctx.extra["host"] = cmd.host;
  ctx.extra["port"] = port;
  ctx.extra["data_dir"] = opt.data_dir.string();
  ctx.write_manifest("running");
  std::cerr << "preflab: serving on " << cmd.host << ":" << port << "\n";
  const bool ok = http.listen(cmd.host, port);
  g_service = nullptr;
  if (!ok && port != 0) throw Error(ErrorCode::IoError, "cannot listen on " + cmd.host + ":" + std::to_string(port));
}

void cmd_export_plots(RunContext& ctx, const Command&) {
  std::vector<std::string> runs;
  for (const auto& [role, path] : ctx.inputs)
    if (role.rfind("run.", 0) == 0) runs.push_back(path);
  if (runs.empty()) throw Error(ErrorCode::InvalidArgument, "export-plots needs at least one --run");
  std::string curves = "run,step,phase,split,accuracy\n";
  std::string strategies = "run,strategy,step,mean_accuracy,ci_lo,ci_hi\n";
  std::string reliability = "run,bin,confidence_lo,confidence_hi,count,mean_confidence,mean_accuracy,ece\n";
  std::string spearman = "run,init_mode,ensemble_size,mean_spearman_r,ci_lo,ci_hi,defined_seeds\n";
  std::string diversity = "run,init_mode,mean_disagreement\n";
  std::size_t used = 0;
  for (const auto& r : runs) {
    const fs::path dir(r);
    const std::string name = dir.filename().string();
    const Json m = read_json_file((dir / "manifest.json").string());
    const std::string command = m.value("command", "");
    if (command == "active") {
      const Json summary = read_json_file((dir / "summary.json").string());
      for (const auto& s : summary.at("snapshots"))
        curves += name + "," + std::to_string(s.at("step").get<std::size_t>()) + "," + s.at("phase").get<std::string>() +
                  "," + s.at("split").get<std::string>() + "," + format_double(s.at("accuracy").get<double>()) + "\n";
    } else if (command == "compare") {
      std::istringstream in(read_text(dir / "compare.csv"));
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line))
        if (!line.empty()) strategies += name + "," + line + "\n";
    } else if (command == "eval-calibration") {
      const Json c = read_json_file((dir / "calibration.json").string());
      std::size_t b = 0;
      for (const auto& bin : c.at("bins")) {
        auto num = [](const Json& v) { return v.is_null() ? std::string() : format_double(v.get<double>()); };
        reliability += name + "," + std::to_string(++b) + "," + num(bin.at("confidence_lo")) + "," +
                       num(bin.at("confidence_hi")) + "," + std::to_string(bin.at("count").get<std::size_t>()) + "," +
                       num(bin.at("mean_confidence")) + "," + num(bin.at("mean_accuracy")) + "," +
                       format_double(c.at("ece").get<double>()) + "\n";
      }
    } else if (command == "eval-oracle") {
      const Json o = read_json_file((dir / "oracle_summary.json").string());
      for (const auto& [mode, v] : o.at("modes").items()) {
        for (const auto& s : v.at("sizes")) {
          auto num = [](const Json& x) { return x.is_null() ? std::string() : format_double(x.get<double>()); };
          const Json& ci = s.at("ci");
          spearman += name + "," + mode + "," + std::to_string(s.at("ensemble_size").get<std::size_t>()) + "," +
                      num(s.at("mean_spearman_r")) + "," + (ci.is_null() ? "" : num(ci.at("lo"))) + "," +
                      (ci.is_null() ? "" : num(ci.at("hi"))) + "," +
                      std::to_string(s.at("defined_seeds").get<std::size_t>()) + "\n";
        }
        diversity += name + "," + mode + "," + format_double(v.at("mean_disagreement").get<double>()) + "\n";
      }
    } else {
      continue;
    }
    ++used;
  }
  if (used == 0) throw Error(ErrorCode::InvalidArgument, "no exportable runs among the --run directories");
  write_text_file(ctx.artifact("accuracy_curves.csv").string(), curves);
  write_text_file(ctx.artifact("strategy_curves.csv").string(), strategies);
  write_text_file(ctx.artifact("reliability.csv").string(), reliability);
  write_text_file(ctx.artifact("spearman_by_size.csv").string(), spearman);
  write_text_file(ctx.artifact("disagreement.csv").string(), diversity);
}

using Handler = void (*)(RunContext&, const Command&);

Json error_json(std::string_view code, const std::string& message) {
  return Json{{"error", {{"code", code}, {"message", message}}}};
}

}  // namespace

fs::path create_run_dir(const fs::path& root, std::string_view command, std::uint64_t hash) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create '" + root.string() + "': " + ec.message());
  const std::string base = utc_now("%Y%m%dT%H%M%SZ") + "-" + std::string(command) + "-" + hex8(hash);
  for (int i = 0; i < 10000; ++i) {
    const fs::path p = root / (i == 0 ? base : base + "-" + std::to_string(i + 1));
    if (fs::create_directory(p, ec)) return p;
    if (ec) throw Error(ErrorCode::IoError, "cannot create '" + p.string() + "': " + ec.message());
  }
  throw Error(ErrorCode::IoError, "too many run directories named " + base);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Preference-learning ensemble workbench"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::vector<std::unique_ptr<Command>> commands;
  std::map<std::string, Handler> handlers;
  auto add = [&](const std::string& name, const std::string& help, Handler h) -> Command& {
    auto c = std::make_unique<Command>();
    c->name = name;
    c->app = app.add_subcommand(name, help);
    c->app->add_option("--config", c->common.config_file, "Config file (key = value lines)");
    c->app->add_option("--set", c->common.sets, "Override one key, e.g. --set active.budget=512");
    c->app->add_option("--runs-dir", c->common.runs_dir, "Parent directory for run directories");
    c->app->add_option("--from-manifest", c->common.from_manifest, "Re-run with the config and inputs of a manifest");
    c->key_flag("--seed", "seed", "Base seed");
    handlers[name] = h;
    commands.push_back(std::move(c));
    return *commands.back();
  };

  {
    auto& c = add("gen-data", "Generate a synthetic preference dataset", cmd_gen_data);
    c.app->add_option("--out", c.out_path, "Also write the dataset here");
    c.key_flag("--d", "data.d", "Feature dimension");
    c.key_flag("--noise", "data.noise", "Noise mode");
    c.key_flag("--train-size", "data.train_size", "Train pairs");
  }
  {
    auto& c = add("pretrain", "Pretrain a shared trunk on the proxy task", cmd_pretrain);
    c.input("--data", "data", "Dataset JSONL");
    c.key_flag("--epochs", "pretrain.epochs", "Pretraining epochs");
  }
  {
    auto& c = add("train", "Train an ensemble on the train split", cmd_train);
    c.input("--data", "data", "Dataset JSONL");
    c.input("--backbone", "backbone", "Pretrained backbone checkpoint");
    c.key_flag("--members", "ensemble.n_members", "Ensemble size");
    c.key_flag("--init-mode", "ensemble.init_mode", "shared | independent");
    c.key_flag("--bootstrap", "ensemble.bootstrap_enabled", "true | false");
    c.key_flag("--epochs", "train.epochs", "Training epochs");
  }
  {
    auto& c = add("active", "Run the pool-based active learning loop", cmd_active);
    c.input("--data", "data", "Dataset JSONL");
    c.input("--backbone", "backbone", "Pretrained backbone checkpoint");
    c.input("--oracle", "oracle", "Oracle checkpoint for --labeler oracle");
    c.key_flag("--strategy", "active.strategy", "Acquisition strategy");
    c.key_flag("--budget", "active.budget", "Pairs to acquire");
    c.key_flag("--pool", "active.pool_size", "Candidate pool size");
    c.key_flag("--replay-epochs", "active.replay_epochs", "Replay passes");
    c.key_flag("--eval-every", "active.eval_every", "Snapshot cadence");
    c.key_flag("--labeler", "active.labeler", "dataset | oracle");
    c.key_flag("--members", "ensemble.n_members", "Ensemble size");
    c.key_flag("--init-mode", "ensemble.init_mode", "shared | independent");
  }
  {
    auto& c = add("compare", "Compare acquisition strategies over seeds", cmd_compare);
    c.input("--data", "data", "Dataset JSONL");
    c.input("--backbone", "backbone", "Pretrained backbone checkpoint");
    c.input("--oracle", "oracle", "Oracle checkpoint for --labeler oracle");
    c.key_flag("--strategies", "compare.strategies", "Comma-separated strategies");
    c.key_flag("--seeds", "compare.seeds", "Number of seeds");
    c.key_flag("--budget", "active.budget", "Pairs to acquire");
    c.key_flag("--pool", "active.pool_size", "Candidate pool size");
    c.key_flag("--threads", "compare.threads", "Worker threads");
    c.key_flag("--members", "ensemble.n_members", "Ensemble size");
    c.key_flag("--init-mode", "ensemble.init_mode", "shared | independent");
    c.key_flag("--labeler", "active.labeler", "dataset | oracle");
  }
  {
    auto& c = add("eval-calibration", "Reliability curve and ECE", cmd_eval_calibration);
    c.input("--data", "data", "Dataset JSONL");
    c.input("--ensemble", "ensemble", "Ensemble checkpoint directory");
    c.input("--model", "model", "Single model checkpoint");
    c.key_flag("--split", "eval.split", "Split to evaluate");
    c.key_flag("--bins", "eval.bins", "Number of bins");
    c.key_flag("--samples", "eval.calibration_samples", "Self-sampled labels (0: stored labels)");
  }
  {
    auto& c = add("eval-oracle", "Uncertainty quality against an oracle labeler", cmd_eval_oracle);
    c.input("--data", "data", "Dataset JSONL");
    c.input("--oracle", "oracle", "Oracle checkpoint (trained when absent)");
    c.input("--backbone", "backbone", "Backbone for shared-init ensembles");
    c.key_flag("--sizes", "eval.ensemble_sizes", "Comma-separated ensemble sizes");
    c.key_flag("--seeds", "eval.seeds", "Number of seeds");
    c.key_flag("--init-modes", "eval.init_modes", "Comma-separated init modes");
    c.key_flag("--split", "eval.split", "Evaluation split");
    c.key_flag("--kl-direction", "eval.kl_direction", "model_oracle | oracle_model");
  }
  {
    auto& c = add("serve", "Serve the annotation API", cmd_serve);
    c.app->add_option("--host", c.host, "Bind address");
    c.app->add_option("--port", c.port, "Port (default $PREFLAB_PORT or 8080)");
    c.app->add_option("--data-dir", c.data_dir, "Session and dataset directory (default $PREFLAB_DATA_DIR)");
    c.app->add_option("--token", c.token, "Static bearer token (default $PREFLAB_TOKEN)");
  }
  {
    auto& c = add("export-plots", "Collect plot-ready CSVs from run directories", cmd_export_plots);
    c.app->add_option("--run", c.run_inputs, "Run directory (repeatable)");
  }

  std::vector<const char*> argv{"preflab"};
  for (const auto& a : args) argv.push_back(a.c_str());

  RunContext ctx;
  bool have_dir = false;
  try {
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
      if (e.get_exit_code() == 0) {
        out << app.help();
        for (const auto& c : commands)
          if (c->app->parsed()) out << c->app->help();
        return 0;
      }
      err << error_json("usage", e.what()).dump() << "\n";
      return 2;
    }
    Command* cmd = nullptr;
    for (const auto& c : commands)
      if (c->app->parsed()) cmd = c.get();

    // Resolve configuration and inputs.
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& s : cmd->common.sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw Error(ErrorCode::ConfigError, "--set expects key=value, got '" + s + "'");
      overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& f : cmd->flags)
      if (f->option->count()) overrides.emplace_back(f->key, f->value);

    if (!cmd->common.from_manifest.empty()) {
      if (!cmd->common.config_file.empty())
        throw Error(ErrorCode::InvalidArgument, "--config and --from-manifest are exclusive");
      const Json m = read_json_file(cmd->common.from_manifest);
      if (m.value("command", "") != cmd->name)
        throw Error(ErrorCode::InvalidArgument, "manifest was written by '" + m.value("command", "") + "', not '" +
                                                    cmd->name + "'");
      ctx.config = config_from_json(m.at("config"));
      for (const auto& [k, v] : overrides) ctx.config.set_text(k, v);
      const Json inputs = m.value("inputs", Json::object());
      for (const auto& [k, v] : inputs.items()) ctx.inputs[k] = v.get<std::string>();
    } else {
      std::optional<fs::path> file;
      if (!cmd->common.config_file.empty()) file = cmd->common.config_file;
      ctx.config = resolve_config(file, overrides);
    }
    for (const auto& [role, opt] : cmd->input_opts)
      if (opt->count()) ctx.inputs[role] = cmd->inputs[role];
    if (!cmd->run_inputs.empty()) {
      for (auto it = ctx.inputs.begin(); it != ctx.inputs.end();)
        it = it->first.rfind("run.", 0) == 0 ? ctx.inputs.erase(it) : std::next(it);
      for (std::size_t i = 0; i < cmd->run_inputs.size(); ++i) {
        std::string idx = std::to_string(i);
        ctx.inputs["run." + std::string(3 - std::min<std::size_t>(3, idx.size()), '0') + idx] = cmd->run_inputs[i];
      }
    }
    for (const auto& [role, path] : ctx.inputs)
      if (!path.empty() && !fs::exists(path))
        throw Error(ErrorCode::NotFound, "input --" + role + " '" + path + "' does not exist");

    ctx.command = cmd->name;
    ctx.started_at = utc_now("%Y-%m-%dT%H:%M:%SZ");
    std::string key = cmd->name + "\n" + ctx.config.to_text();
    for (const auto& [role, path] : ctx.inputs) key += role + "=" + path + "\n";
    ctx.dir = create_run_dir(cmd->common.runs_dir, cmd->name, fnv1a64(key));
    have_dir = true;
    write_text_file((ctx.dir / "resolved.conf").string(), ctx.config.to_text());
    ctx.artifacts.push_back("resolved.conf");
    ctx.write_manifest("running");

    const auto t0 = Clock::now();
    handlers.at(cmd->name)(ctx, *cmd);
    ctx.timings["total_seconds"] = seconds_since(t0);
    ctx.write_manifest("completed");
    out << Json{{"status", "ok"}, {"command", cmd->name}, {"run_dir", ctx.dir.string()}}.dump() << "\n";
    return 0;
  } catch (const Error& e) {
    if (have_dir) {
      try {
        ctx.write_manifest("failed", e);
      } catch (...) {
      }
    }
    err << error_json(to_string(e.code()), e.what()).dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    if (have_dir) {
      try {
        ctx.write_manifest("failed", Error(ErrorCode::IoError, e.what()));
      } catch (...) {
      }
    }
    err << error_json("internal", e.what()).dump() << "\n";
    return 1;
  }
}

}  // namespace preflab
