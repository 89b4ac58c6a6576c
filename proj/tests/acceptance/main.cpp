// One PASS/FAIL line per acceptance criterion. Exit status is nonzero if any fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "preflab/active_loop.hpp"
#include "preflab/evaluation.hpp"
#include "preflab/json_io.hpp"
#include "preflab/kernels.hpp"

using namespace preflab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void report(const std::string& name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = limit_s <= 0 || secs < limit_s;
  const bool ok = o.pass && in_time;
  if (!ok) ++g_failures;
  std::ostringstream line;
  line.setf(std::ios::fixed);
  line.precision(2);
  line << (ok ? "PASS " : "FAIL ") << name << " [" << secs << "s";
  if (limit_s > 0) line << " / limit " << limit_s << "s";
  line << "] " << o.detail;
  if (!in_time) line << " (over time limit)";
  std::cout << line.str() << std::endl;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

// --- subprocess helpers -------------------------------------------------------

struct Proc {
  int code = -1;
  std::string out;
};

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

Proc run_cli(const std::vector<std::string>& args) {
  std::string cmd = quote(PREFLAB_CLI_PATH);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " 2>&1";
  Proc p;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return p;
  std::array<char, 4096> buf{};
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) p.out.append(buf.data(), n);
  const int status = ::pclose(pipe);
  p.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return p;
}

fs::path run_dir_of(const Proc& p) {
  std::istringstream in(p.out);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty() && line.front() == '{' && line.find("\"run_dir\"") != std::string::npos) last = line;
  if (last.empty()) throw std::runtime_error("command failed: " + p.out);
  return Json::parse(last).at("run_dir").get<std::string>();
}

fs::path must_run(const std::vector<std::string>& args) {
  const Proc p = run_cli(args);
  if (p.code != 0) throw std::runtime_error("exit " + std::to_string(p.code) + ": " + p.out);
  return run_dir_of(p);
}

Json read_json(const fs::path& p) { return Json::parse(fixtures::slurp(p)); }

// Every file below `dir` except the manifest, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).string();
    if (rel == "manifest.json") continue;
    out[rel] = fixtures::slurp(e.path());
  }
  return out;
}

// --- independent references -----------------------------------------------------

double kl_formula(double p, double q) { return p * std::log(p / q) + (1 - p) * std::log((1 - p) / (1 - q)); }

double brute_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double w : v) less += w < v[i], equal += w == v[i];
      r[i] = less + (equal + 1) / 2;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = double(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += rx[i] / n, my += ry[i] / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

std::vector<ComparisonPair> random_pairs(Rng& rng, std::size_t n, std::size_t d, double scale = 1.0) {
  std::vector<ComparisonPair> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(fixtures::make_pair("p" + std::to_string(i), fixtures::normal_vector(rng, d, scale),
                                      fixtures::normal_vector(rng, d, scale),
                                      uniform01(rng) < 0.5 ? Choice::First : Choice::Second));
  return out;
}

ModelConfig random_model_config(Rng& rng) {
  ModelConfig c;
  c.d = 2 + uniform_index(rng, 10);
  const std::size_t depth = uniform_index(rng, 3);
  c.hidden_widths.clear();
  for (std::size_t l = 0; l < depth; ++l) c.hidden_widths.push_back(1 + uniform_index(rng, 12));
  c.activation = uniform_index(rng, 2) ? Activation::ReLU : Activation::Tanh;
  return c;
}

// --- criteria -------------------------------------------------------------------

Outcome gradient_check() {
  Rng rng(2024);
  double worst = 0;
  for (int f = 0; f < 20; ++f) {
    const ModelConfig c = random_model_config(rng);
    RewardModel m(c, 1000 + f);
    for (double& v : m.parameters()) v += 0.1 * standard_normal(rng);
    const auto pairs = random_pairs(rng, 1 + uniform_index(rng, 12), c.d);
    std::vector<double> w;
    for (std::size_t i = 0; i < pairs.size(); ++i) w.push_back(uniform_index(rng, 4) == 0 ? 0.0 : 0.25 + 2 * uniform01(rng));
    if (std::all_of(w.begin(), w.end(), [](double x) { return x == 0; })) w[0] = 1.0;
    const PairRefs batch = refs(pairs);
    const Gradients g = grad(m, batch, w);
    auto p = m.parameters();
    const double h = 1e-5;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + h;
      const double up = nll_loss(m, batch, w);
      p[i] = saved - h;
      const double down = nll_loss(m, batch, w);
      p[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double denom = std::max({std::abs(numeric), std::abs(g.values[i]), 1e-6});
      worst = std::max(worst, std::abs(numeric - g.values[i]) / denom);
    }
  }
  return {worst < 1e-4, "20 fixtures, max relative error " + fmt(worst) + " (< 1e-4)"};
}

Outcome bradley_terry() {
  Rng rng(7);
  std::size_t antisym_fail = 0, bias_fail = 0;
  for (int f = 0; f < 1000; ++f) {
    const ModelConfig c = random_model_config(rng);
    RewardModel m(c, f);
    const auto a = fixtures::normal_vector(rng, c.d, 3.0), b = fixtures::normal_vector(rng, c.d, 3.0);
    const auto ab = fixtures::make_pair("ab", a, b), ba = fixtures::make_pair("ba", b, a);
    const double p = prefer_prob(m, ab);
    if (p + prefer_prob(m, ba) != 1.0) ++antisym_fail;
    m.head_bias() += 100.0 * standard_normal(rng);
    if (prefer_prob(m, ab) != p) ++bias_fail;
  }
  return {antisym_fail == 0 && bias_fail == 0,
          "1000 fixtures, antisymmetry failures " + std::to_string(antisym_fail) + ", bias failures " +
              std::to_string(bias_fail)};
}

Outcome bootstrap_scheme() {
  const std::size_t n = 1000000;
  std::size_t zeros = 0, bad = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = keyed_bootstrap_weight(99, i % 16, "k-" + std::to_string(i / 16));
    zeros += w == 0.0;
    bad += !(w == 0.0 || w == 2.0);
  }
  const double frac = double(zeros) / n;

  // Weights seen by every epoch of a real training run.
  const auto ds = fixtures::small_dataset(3, 8, 400);
  ModelConfig mc;
  mc.d = 8;
  mc.hidden_widths = {8};
  Ensemble e = init_ensemble(RewardModel(mc, 1), EnsembleConfig::with_members(4, 5));
  const PairRefs pairs = ds.labeled(Split::Train);
  TrainConfig tc;
  tc.epochs = 4;
  tc.seed = 11;
  bool stable = true;
  for (std::size_t m = 0; m < e.size(); ++m) {
    std::vector<std::map<std::size_t, double>> per_epoch(tc.epochs);
    std::size_t calls = 0;
    const WeightFn fn = [&](std::size_t i) {
      const double w = e.bootstrap_weight(m, pairs[i]->pair_id);
      per_epoch[calls++ / pairs.size()][i] = w;
      return w;
    };
    e.member(m) = train_pairs(e.member(m), pairs, tc, fn).model;
    for (std::size_t ep = 1; ep < tc.epochs; ++ep) stable = stable && per_epoch[ep] == per_epoch[0];
    stable = stable && per_epoch[0].size() == pairs.size();
  }
  const bool ok = bad == 0 && std::abs(frac - 0.5) <= 0.0015 && stable;
  return {ok, "zero fraction " + fmt(frac, 6) + " over 1e6 keys (0.5 +- 0.0015), non {0,2} weights " +
                  std::to_string(bad) + ", identical across 4 epochs: " + (stable ? "yes" : "no")};
}

struct ProtocolCheck {
  bool ok = false;
  std::string detail;
};

ProtocolCheck check_runlog(const fs::path& run, std::size_t budget, std::size_t pool) {
  std::istringstream in(fixtures::slurp(run / "runlog.jsonl"));
  std::string line;
  std::size_t records = 0, bad_pool = 0;
  std::set<std::string> chosen;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const Json r = Json::parse(line);
    ++records;
    const std::string c = r.at("chosen");
    chosen.insert(c);
    const auto& pl = r.at("pool");
    const bool member = std::find(pl.begin(), pl.end(), Json(c)) != pl.end();
    if (pl.size() != pool || !member) ++bad_pool;
  }
  const Json s = read_json(run / "summary.json");
  const std::size_t replay_calls = s.at("labeler_calls_replay");
  const bool ok = records == budget && chosen.size() == budget && bad_pool == 0 && replay_calls == 0 &&
                  s.at("replay_steps").get<std::size_t>() > 0;
  return {ok, "budget " + std::to_string(budget) + ": records " + std::to_string(records) + ", distinct " +
                  std::to_string(chosen.size()) + ", bad pools " + std::to_string(bad_pool) + ", replay labeler calls " +
                  std::to_string(replay_calls)};
}

Outcome metric_oracles() {
  Rng rng(31);
  double worst_r = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + uniform_index(rng, 999);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = std::round(4 * standard_normal(rng)) / 2;
      y[i] = t % 3 == 0 ? double(uniform_index(rng, 5)) : standard_normal(rng) + 0.2 * x[i];
    }
    const auto r = spearman(x, y);
    if (!r) return {false, "undefined correlation on a non-degenerate fixture"};
    worst_r = std::max(worst_r, std::abs(*r - brute_spearman(x, y)));
  }
  double worst_kl = 0;
  for (int t = 0; t < 10000; ++t) {
    const double p = 1e-4 + (1 - 2e-4) * uniform01(rng), q = 1e-4 + (1 - 2e-4) * uniform01(rng);
    worst_kl = std::max(worst_kl, std::abs(bernoulli_kl(p, q) - kl_formula(p, q)));
  }
  const Interval ci = bootstrap_ci(std::vector<double>(40, 0.625), 0.95, 10000, 3);
  const bool zero_width = ci.lo == 0.625 && ci.hi == 0.625;
  return {worst_r < 1e-12 && worst_kl < 1e-12 && zero_width,
          "spearman max diff " + fmt(worst_r, 3) + ", kl max diff " + fmt(worst_kl, 3) + ", constant CI (" +
              fmt(ci.lo) + ", " + fmt(ci.hi) + ")"};
}

Outcome calibration_self_consistency() {
  const auto ds = fixtures::small_dataset(5, 8, 2048);
  ModelConfig mc;
  mc.d = 8;
  mc.hidden_widths = {16, 16};
  TrainConfig tc;
  tc.epochs = 3;
  tc.learning_rate = 3e-3;
  const RewardModel model = train(RewardModel(mc, 2), ds, Split::Train, tc).model;
  PairRefs pool;
  while (pool.size() < 50000)
    for (const ComparisonPair* p : ds.split(Split::Train)) pool.push_back(p);
  pool.resize(50000);
  const auto labeled = sample_oracle_labels(model, pool, 17);
  std::vector<Prediction> preds;
  for (const auto& p : labeled) preds.push_back(to_prediction(prefer_prob(model, p), *p.label));
  const CalibrationReport r = calibration_curve(preds, 10);
  std::size_t total = 0;
  for (const auto& b : r.bins) total += b.count;
  const bool edges = r.bins.size() == 10 && r.bins.front().confidence_lo == 0.5 && r.bins.back().confidence_hi == 1.0;
  return {r.ece < 0.02 && total == 50000 && edges, "N=50000, 10 bins on [0.5, 1], ECE " + fmt(r.ece) + " (< 0.02)"};
}

const Json* size_entry(const Json& mode, std::size_t k) {
  for (const auto& s : mode.at("sizes"))
    if (s.at("ensemble_size") == k) return &s;
  return nullptr;
}

}  // namespace

int main() {
  const fs::path root = fixtures::tmp_dir("acceptance");
  const std::string runs = (root / "runs").string();
  std::cout << "kernels: " << kernels::active().name << std::endl;

  report("gradient-correctness", 10, gradient_check);
  report("bradley-terry-identities", 5, bradley_terry);
  report("bootstrap-scheme", 10, bootstrap_scheme);

  // Shared dataset for the command-line criteria.
  const fs::path data = root / "data.jsonl";
  fs::path gen_run;
  try {
    gen_run = must_run({"gen-data", "--seed", "7", "--out", data.string(), "--runs-dir", runs});
  } catch (const std::exception& e) {
    std::cout << "setup failed: " << e.what() << std::endl;
    return 1;
  }

  std::vector<fs::path> active_runs;
  for (std::size_t budget : {4096u, 1024u}) {
    report("protocol-exactness-budget-" + std::to_string(budget), 300, [&]() -> Outcome {
      const fs::path run = must_run({"active", "--data", data.string(), "--strategy", "variance", "--budget",
                                     std::to_string(budget), "--pool", "16", "--runs-dir", runs});
      active_runs.push_back(run);
      const ProtocolCheck c = check_runlog(run, budget, 16);
      return {c.ok, c.detail};
    });
  }

  report("metric-oracles", 30, metric_oracles);
  report("calibration-self-consistency", 30, calibration_self_consistency);

  fs::path oracle_run;
  Json summary;
  report("oracle-evaluation-pipeline", 600, [&]() -> Outcome {
    oracle_run = must_run({"eval-oracle", "--data", data.string(), "--runs-dir", runs});
    summary = read_json(oracle_run / "oracle_summary.json");
    const Json& ind = summary.at("modes").at("independent");
    const Json* e8 = size_entry(ind, 8);
    if (!e8 || e8->at("mean_spearman_r").is_null() || e8->at("ci").is_null())
      return {false, "no defined n=8 correlation"};
    const double r = e8->at("mean_spearman_r");
    const double lo = e8->at("ci").at("lo"), hi = e8->at("ci").at("hi");
    // Cross-check the mean against the per-seed values.
    double sum = 0;
    std::size_t defined = 0;
    for (const auto& v : e8->at("per_seed"))
      if (!v.is_null()) sum += v.get<double>(), ++defined;
    const bool mean_ok = defined == 5 && std::abs(sum / defined - r) < 1e-12;
    const Json& rep = summary.at("replicated_oracle");
    const bool rep_ok = rep.at("members") == 8 && rep.at("max_kl").get<double>() == 0.0 && rep.at("spearman_r").is_null();
    return {r > 0 && lo > 0 && mean_ok && rep_ok,
            "independent n=8 over 5 seeds: r=" + fmt(r) + " CI [" + fmt(lo) + ", " + fmt(hi) +
                "]; replicated oracle x8: max KL " + fmt(rep.at("max_kl").get<double>()) + ", correlation " +
                (rep.at("spearman_r").is_null() ? "undefined" : "defined")};
  });

  report("directional-trend-ensemble-size", 0, [&]() -> Outcome {
    if (summary.is_null()) return {false, "oracle run unavailable"};
    std::string detail;
    bool ok = true;
    for (const char* mode : {"independent", "shared"}) {
      const Json& m = summary.at("modes").at(mode);
      double prev = -2;
      bool mono = true;
      std::string vals;
      for (std::size_t k : {3u, 8u, 16u}) {
        const Json* e = size_entry(m, k);
        if (!e || e->at("mean_spearman_r").is_null()) {
          mono = false;
          vals += " " + std::to_string(k) + ":undefined";
          continue;
        }
        const double r = e->at("mean_spearman_r");
        mono = mono && r >= prev;
        prev = r;
        vals += " " + std::to_string(k) + ":" + fmt(r);
      }
      if (std::string(mode) == "independent") ok = mono;
      detail += std::string(mode) + (mono ? " non-decreasing" : " not monotone") + " (" + vals.substr(1) + "); ";
    }
    return {ok, detail.substr(0, detail.size() - 2)};
  });

  report("diversity-probe", 0, [&]() -> Outcome {
    if (summary.is_null()) return {false, "oracle run unavailable"};
    const Json& d = summary.at("diversity");
    const double sh = d.at("shared_disagreement"), in = d.at("independent_disagreement");
    std::string cmp;
    for (const auto& s : d.at("spearman_comparison")) {
      const std::size_t k = s.at("ensemble_size");
      const Json* a = size_entry(summary["modes"]["shared"], k);
      const Json* b = size_entry(summary["modes"]["independent"], k);
      auto ci = [](const Json* e) {
        if (!e || e->at("ci").is_null()) return std::string("undefined");
        return fmt(e->at("mean_spearman_r").get<double>()) + " [" + fmt(e->at("ci").at("lo").get<double>()) + ", " +
               fmt(e->at("ci").at("hi").get<double>()) + "]";
      };
      cmp += " n=" + std::to_string(k) + " shared " + ci(a) + " vs independent " + ci(b) +
             (s.at("advisory").get<bool>() ? " (advisory: CIs overlap)" : "") + ";";
    }
    return {sh < in, "mean disagreement shared " + fmt(sh) + " < independent " + fmt(in) + ";" + cmp};
  });

  report("determinism-from-manifest", 0, [&]() -> Outcome {
    std::vector<fs::path> originals{gen_run};
    const std::string widths = "model.hidden_widths=[16]";
    const fs::path pre = must_run({"pretrain", "--data", data.string(), "--set", widths, "--epochs", "1", "--runs-dir", runs});
    originals.push_back(pre);
    const fs::path tr = must_run({"train", "--data", data.string(), "--backbone", (pre / "backbone.json").string(), "--set",
                                  widths, "--members", "3", "--epochs", "1", "--runs-dir", runs});
    originals.push_back(tr);
    if (active_runs.size() > 1) originals.push_back(active_runs[1]);
    originals.push_back(must_run({"compare", "--data", data.string(), "--set", widths, "--budget", "128", "--pool", "16",
                                  "--seeds", "2", "--members", "3", "--init-mode", "independent", "--runs-dir", runs}));
    originals.push_back(must_run({"eval-calibration", "--data", data.string(), "--ensemble", (tr / "ensemble").string(),
                                  "--set", widths, "--runs-dir", runs}));
    if (!oracle_run.empty()) originals.push_back(oracle_run);
    std::vector<std::string> plot_args{"export-plots", "--runs-dir", runs};
    for (const auto& r : originals) plot_args.insert(plot_args.end(), {"--run", r.string()});
    originals.push_back(must_run(plot_args));

    std::string detail;
    bool ok = true;
    for (const auto& run : originals) {
      const Json m = read_json(run / "manifest.json");
      const std::string command = m.at("command");
      const fs::path again =
          must_run({command, "--from-manifest", (run / "manifest.json").string(), "--runs-dir", runs});
      const auto a = tree(run), b = tree(again);
      std::size_t differing = 0;
      for (const auto& [name, body] : a) {
        auto it = b.find(name);
        if (it == b.end() || it->second != body) ++differing;
      }
      const bool same = differing == 0 && a.size() == b.size();
      ok = ok && same;
      detail += command + (same ? " ok" : " DIFFERS") + " (" + std::to_string(a.size()) + " files); ";
    }
    return {ok, detail};
  });

  std::cout << (g_failures == 0 ? "ALL PASS" : std::to_string(g_failures) + " FAILED") << std::endl;
  return g_failures == 0 ? 0 : 1;
}
