#include "preflab/service.hpp"

#include <cstdio>
#include <iostream>
#include <random>
#include <thread>

#include "httplib.h"
#include "preflab/config.hpp"
#include "preflab/error.hpp"

namespace preflab {
namespace fs = std::filesystem;

std::string_view to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::Active: return "active";
    case SessionStatus::Completed: return "completed";
    case SessionStatus::Aborted: return "aborted";
  }
  return "active";
}

namespace {

SessionStatus parse_status(std::string_view s) {
  if (s == "active") return SessionStatus::Active;
  if (s == "completed") return SessionStatus::Completed;
  if (s == "aborted") return SessionStatus::Aborted;
  throw Error(ErrorCode::ParseError, "unknown session status '" + std::string(s) + "'");
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound: return 404;
    case ErrorCode::Conflict: return 409;
    case ErrorCode::IoError:
    case ErrorCode::NonFinite: return 500;
    default: return 422;
  }
}

ServiceResponse error_response(int status, std::string_view code, const std::string& message) {
  return {status, Json{{"error", {{"code", code}, {"message", message}}}}};
}

ServiceResponse error_response(const Error& e) {
  return error_response(http_status(e.code()), to_string(e.code()), e.what());
}

std::string new_session_id() {
  std::random_device rd;
  const std::uint64_t v = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Json item_json(const Item& item) {
  Json j{{"id", item.id}};
  j["text"] = item.text ? Json(*item.text) : Json(nullptr);
  return j;
}

}  // namespace

struct SessionManager::Session {
  std::string id;
  std::string idempotency_key;
  Json payload;
  std::shared_ptr<const PreferenceDataset> dataset;
  std::unique_ptr<ActiveLearner> learner;
  std::optional<Query> pending;
  SessionStatus status = SessionStatus::Active;
  std::vector<std::pair<std::string, Choice>> answers;
  std::mutex mu;

  // Published stats, readable without the session lock.
  mutable std::mutex snapshot_mu;
  std::shared_ptr<const Json> stats_snapshot;

  Json progress() const { return {{"labeled", learner->labeled()}, {"budget", learner->config().budget}}; }

  Json completion_summary() const {
    Json snaps = Json::array();
    for (const auto& s : learner->log().snapshots) snaps.push_back(to_json(s));
    return {{"labeled", learner->labeled()}, {"budget", learner->config().budget}, {"snapshots", snaps}};
  }

  void publish() {
    Json snaps = Json::array();
    for (const auto& s : learner->log().snapshots) snaps.push_back(to_json(s));
    const auto& cfg = learner->config();
    auto j = std::make_shared<Json>(Json{
        {"schema_version", 1},
        {"session_id", id},
        {"status", to_string(status)},
        {"labeled", learner->labeled()},
        {"budget", cfg.budget},
        {"strategy", to_string(cfg.strategy.kind)},
        {"snapshots", std::move(snaps)},
        {"mean_pool_variance", learner->mean_last_pool_variance()},
        {"pending_pair_id", pending ? Json(pending->chosen()->pair_id) : Json(nullptr)}});
    std::lock_guard lk(snapshot_mu);
    stats_snapshot = std::move(j);
  }

  Json record() const {
    Json a = Json::array();
    for (const auto& [pid, c] : answers) a.push_back({{"pair_id", pid}, {"choice", to_string(c)}});
    return {{"schema_version", 1}, {"session_id", id},     {"idempotency_key", idempotency_key},
            {"payload", payload},  {"status", to_string(status)}, {"answers", std::move(a)}};
  }
};

SessionManager::SessionManager(ServiceOptions options) : options_(std::move(options)) { load_all(); }
SessionManager::~SessionManager() = default;

std::shared_ptr<SessionManager::Session> SessionManager::find(const std::string& id) const {
  std::lock_guard lk(mu_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::size_t SessionManager::session_count() const {
  std::lock_guard lk(mu_);
  return sessions_.size();
}

std::shared_ptr<const PreferenceDataset> SessionManager::dataset_for(const fs::path& path) {
  const std::string key = fs::weakly_canonical(path).string();
  {
    std::lock_guard lk(mu_);
    if (auto it = datasets_.find(key); it != datasets_.end()) return it->second;
  }
  if (!fs::exists(path)) throw Error(ErrorCode::NotFound, "dataset '" + path.string() + "' not found");
  auto ds = std::make_shared<const PreferenceDataset>(load_dataset(path));
  std::lock_guard lk(mu_);
  return datasets_.emplace(key, std::move(ds)).first->second;
}

std::shared_ptr<SessionManager::Session> SessionManager::build(const std::string& id, const Json& record) {
  const Json& payload = record.at("payload");
  if (!payload.is_object()) throw Error(ErrorCode::InvalidArgument, "payload must be a JSON object");
  if (payload.value("schema_version", 1) != 1)
    throw Error(ErrorCode::InvalidArgument, "unsupported payload schema_version");
  if (!payload.contains("dataset") || !payload["dataset"].is_string())
    throw Error(ErrorCode::InvalidArgument, "payload needs a 'dataset' path");
  auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : options_.data_dir / path;
  };

  Config config = Config::defaults();
  if (payload.contains("config")) {
    if (!payload["config"].is_object()) throw Error(ErrorCode::InvalidArgument, "'config' must be an object");
    for (const auto& [k, v] : payload["config"].items()) config.set(k, v);
  }
  config.derive_seeds();
  const ActiveConfig active = active_config(config);
  const EnsembleConfig ens = ensemble_config(config);

  auto s = std::make_shared<Session>();
  s->id = id;
  s->idempotency_key = record.value("idempotency_key", "");
  s->payload = payload;
  s->dataset = dataset_for(resolve(payload["dataset"].get<std::string>()));
  const ModelConfig model = model_config(config, s->dataset->d);

  RewardModel backbone;
  if (payload.contains("backbone")) {
    backbone = load_checkpoint(resolve(payload["backbone"].get<std::string>()));
    if (backbone.config().d != s->dataset->d)
      throw Error(ErrorCode::DimensionMismatch, "backbone dimension does not match the dataset");
  } else if (ens.init_mode == InitMode::SharedBackbone) {
    backbone = pretrain_backbone(*s->dataset, model, config.get_seed("seeds.model"), pretrain_config(config)).model;
  } else {
    backbone = RewardModel(model, config.get_seed("seeds.model"));
  }
  s->learner = std::make_unique<ActiveLearner>(*s->dataset, init_ensemble(backbone, ens), active,
                                               LabelerKind::HumanSession);

  for (const auto& a : record.value("answers", Json::array())) {
    const std::string pid = a.at("pair_id").get<std::string>();
    const Choice c = parse_choice(a.at("choice").get<std::string>());
    const Query q = s->learner->propose();
    if (q.chosen()->pair_id != pid)
      throw Error(ErrorCode::ParseError, "session " + id + " diverged on replay at step " + std::to_string(q.step));
    s->learner->apply_label(q, c);
    s->answers.emplace_back(pid, c);
  }
  if (s->learner->online_complete()) {
    s->learner->finish();
    s->status = SessionStatus::Completed;
  } else {
    s->status = parse_status(record.value("status", "active"));
    if (s->status == SessionStatus::Completed) throw Error(ErrorCode::ParseError, "session record is inconsistent");
  }
  s->publish();
  return s;
}

void SessionManager::persist(const Session& s) const {
  const fs::path dir = options_.data_dir / "sessions";
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create '" + dir.string() + "': " + ec.message());
  write_text_file((dir / (s.id + ".json")).string(), s.record().dump() + "\n");
  if (s.status == SessionStatus::Completed) write_runlog(s.learner->log(), dir / s.id);
}

void SessionManager::load_all() {
  const fs::path dir = options_.data_dir / "sessions";
  if (!fs::is_directory(dir)) return;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    try {
      const Json rec = read_json_file(f.string());
      const std::string id = rec.at("session_id").get<std::string>();
      auto s = build(id, rec);
      sessions_[id] = s;
      if (!s->idempotency_key.empty()) idempotency_[s->idempotency_key] = id;
    } catch (const std::exception& e) {
      std::cerr << "preflab: skipping session file " << f << ": " << e.what() << "\n";
    }
  }
}

ServiceResponse SessionManager::create_session(const Json& payload, const std::optional<std::string>& key_in) {
  std::optional<std::string> key = key_in;
  if (!key && payload.is_object() && payload.contains("idempotency_key") && payload["idempotency_key"].is_string())
    key = payload["idempotency_key"].get<std::string>();
  if (key && key->empty()) key.reset();
  if (key) {
    std::lock_guard lk(mu_);
    if (auto it = idempotency_.find(*key); it != idempotency_.end())
      return {200, {{"schema_version", 1}, {"session_id", it->second}, {"created", false}}};
  }
  try {
    const std::string id = new_session_id();
    Json rec{{"payload", payload}, {"idempotency_key", key.value_or("")}, {"answers", Json::array()}};
    auto s = build(id, rec);
    {
      std::lock_guard lk(mu_);
      // A concurrent request with the same key may have won the race.
      if (key) {
        if (auto it = idempotency_.find(*key); it != idempotency_.end())
          return {200, {{"schema_version", 1}, {"session_id", it->second}, {"created", false}}};
        idempotency_[*key] = id;
      }
      sessions_[id] = s;
    }
    persist(*s);
    return {201, {{"schema_version", 1}, {"session_id", id}, {"created", true}, {"progress", s->progress()}}};
  } catch (const Error& e) {
    return error_response(e);
  } catch (const Json::exception& e) {
    return error_response(422, "invalid_argument", e.what());
  }
}

ServiceResponse SessionManager::next_query(const std::string& id) {
  auto s = find(id);
  if (!s) return error_response(404, "not_found", "unknown session '" + id + "'");
  std::lock_guard lk(s->mu);
  if (s->status == SessionStatus::Completed) {
    ServiceResponse r = error_response(409, "conflict", "session is complete");
    r.body["summary"] = s->completion_summary();
    return r;
  }
  if (s->status == SessionStatus::Aborted) return error_response(409, "conflict", "session is aborted");
  try {
    if (!s->pending) {
      s->pending = s->learner->propose();
      s->publish();
    }
    const Query& q = *s->pending;
    const ComparisonPair& p = *q.chosen();
    Json pool = Json::array();
    for (const auto* c : q.pool) pool.push_back(c->pair_id);
    return {200,
            {{"schema_version", 1},
             {"session_id", id},
             {"step", q.step},
             {"pair_id", p.pair_id},
             {"first", item_json(p.first)},
             {"second", item_json(p.second)},
             {"pool", std::move(pool)},
             {"progress", s->progress()},
             {"strategy", to_string(s->learner->config().strategy.kind)}}};
  } catch (const Error& e) {
    return error_response(e);
  }
}

ServiceResponse SessionManager::submit_label(const std::string& id, const Json& body) {
  auto s = find(id);
  if (!s) return error_response(404, "not_found", "unknown session '" + id + "'");
  if (!body.is_object() || !body.contains("pair_id") || !body["pair_id"].is_string())
    return error_response(422, "invalid_argument", "body needs a string 'pair_id'");
  if (!body.contains("choice") || !body["choice"].is_string())
    return error_response(422, "invalid_argument", "body needs 'choice': 'first' or 'second'");
  const std::string choice_text = body["choice"].get<std::string>();
  if (choice_text != "first" && choice_text != "second")
    return error_response(422, "invalid_argument", "choice must be 'first' or 'second', got '" + choice_text + "'");
  const Choice choice = parse_choice(choice_text);
  const std::string pid = body["pair_id"].get<std::string>();

  std::lock_guard lk(s->mu);
  if (s->status != SessionStatus::Active)
    return error_response(409, "conflict", "session is " + std::string(to_string(s->status)));
  if (!s->pending) return error_response(409, "conflict", "no pending query; call next first");
  if (s->pending->chosen()->pair_id != pid)
    return error_response(409, "conflict",
                          "pair '" + pid + "' is not the pending pair '" + s->pending->chosen()->pair_id + "'");
  try {
    const AcquisitionRecord rec = s->learner->apply_label(*s->pending, choice);
    s->pending.reset();
    s->answers.emplace_back(pid, choice);
    if (s->learner->online_complete()) {
      s->learner->finish();
      s->status = SessionStatus::Completed;
    }
    persist(*s);
    s->publish();
    return {200,
            {{"schema_version", 1},
             {"session_id", id},
             {"pair_id", pid},
             {"choice", choice_text},
             {"labeled", s->learner->labeled()},
             {"budget", s->learner->config().budget},
             {"member_losses", rec.member_losses},
             {"variance_before", rec.variance_before},
             {"variance_after", rec.variance_after},
             {"status", to_string(s->status)}}};
  } catch (const Error& e) {
    return error_response(e);
  }
}

ServiceResponse SessionManager::stats(const std::string& id) const {
  auto s = find(id);
  if (!s) return error_response(404, "not_found", "unknown session '" + id + "'");
  std::shared_ptr<const Json> snap;
  {
    std::lock_guard lk(s->snapshot_mu);
    snap = s->stats_snapshot;
  }
  return {200, *snap};
}

ServiceResponse SessionManager::abort(const std::string& id) {
  auto s = find(id);
  if (!s) return error_response(404, "not_found", "unknown session '" + id + "'");
  std::lock_guard lk(s->mu);
  if (s->status == SessionStatus::Completed) return error_response(409, "conflict", "session is complete");
  s->status = SessionStatus::Aborted;
  try {
    persist(*s);
  } catch (const Error& e) {
    return error_response(e);
  }
  s->publish();
  return {200, {{"schema_version", 1}, {"session_id", id}, {"status", "aborted"}, {"resume_token", id},
                {"progress", s->progress()}}};
}

ServiceResponse SessionManager::resume(const std::string& id) {
  auto s = find(id);
  if (!s) return error_response(404, "not_found", "unknown session '" + id + "'");
  std::lock_guard lk(s->mu);
  if (s->status == SessionStatus::Completed) return error_response(409, "conflict", "session is complete");
  s->status = SessionStatus::Active;
  try {
    persist(*s);
  } catch (const Error& e) {
    return error_response(e);
  }
  s->publish();
  return {200, {{"schema_version", 1}, {"session_id", id}, {"status", "active"}, {"progress", s->progress()}}};
}

ServiceResponse SessionManager::health() const {
  return {200, {{"schema_version", 1}, {"status", "ok"}, {"sessions", session_count()}}};
}

std::optional<std::string> SessionManager::ensemble_state(const std::string& id) const {
  auto s = find(id);
  if (!s) return std::nullopt;
  std::lock_guard lk(s->mu);
  return ensemble_to_string(s->learner->ensemble());
}

// ---------------------------------------------------------------------------
// HTTP

struct HttpService::Impl {
  SessionManager& manager;
  httplib::Server server;
  std::thread thread;

  explicit Impl(SessionManager& m) : manager(m) { routes(); }

  static void send(httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  }

  static std::optional<Json> parse_body(const httplib::Request& req, httplib::Response& res) {
    try {
      return req.body.empty() ? Json::object() : Json::parse(req.body);
    } catch (const Json::exception& e) {
      send(res, error_response(400, "parse_error", std::string("malformed JSON body: ") + e.what()));
      return std::nullopt;
    }
  }

  void routes() {
    const auto token = manager.options().bearer_token;
    if (token) {
      server.set_pre_routing_handler([expected = "Bearer " + *token](const httplib::Request& req,
                                                                    httplib::Response& res) {
        if (req.path == "/healthz" || req.get_header_value("Authorization") == expected)
          return httplib::Server::HandlerResponse::Unhandled;
        send(res, error_response(401, "unauthorized", "missing or invalid bearer token"));
        return httplib::Server::HandlerResponse::Handled;
      });
    }
    server.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) { send(res, manager.health()); });
    server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      auto body = parse_body(req, res);
      if (!body) return;
      std::optional<std::string> key;
      if (req.has_header("Idempotency-Key")) key = req.get_header_value("Idempotency-Key");
      send(res, manager.create_session(*body, key));
    });
    server.Get("/sessions/:id/next", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, manager.next_query(req.path_params.at("id")));
    });
    server.Post("/sessions/:id/labels", [this](const httplib::Request& req, httplib::Response& res) {
      auto body = parse_body(req, res);
      if (!body) return;
      send(res, manager.submit_label(req.path_params.at("id"), *body));
    });
    server.Get("/sessions/:id/stats", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, manager.stats(req.path_params.at("id")));
    });
    server.Post("/sessions/:id/abort", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, manager.abort(req.path_params.at("id")));
    });
    server.Post("/sessions/:id/resume", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, manager.resume(req.path_params.at("id")));
    });
    server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
      if (!res.body.empty()) return;
      send(res, error_response(res.status, res.status == 404 ? "not_found" : "http_error",
                               "no route for " + req.method + " " + req.path));
    });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string msg = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        msg = e.what();
      } catch (...) {
      }
      send(res, error_response(500, "internal", msg));
    });
  }
};

HttpService::HttpService(SessionManager& manager) : impl_(std::make_unique<Impl>(manager)) {}

HttpService::~HttpService() { stop(); }

int HttpService::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error(ErrorCode::IoError, "cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

bool HttpService::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

void HttpService::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace preflab
