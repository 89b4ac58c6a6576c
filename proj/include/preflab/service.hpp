#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "preflab/active_loop.hpp"
#include "preflab/json_io.hpp"

namespace preflab {

enum class SessionStatus { Active, Completed, Aborted };
std::string_view to_string(SessionStatus s);

struct ServiceOptions {
  std::filesystem::path data_dir = ".";
  std::optional<std::string> bearer_token;
};

/// Status code plus JSON body; errors use {"error": {"code", "message"}}.
struct ServiceResponse {
  int status = 200;
  Json body;
};

/// Session state and the HTTP-independent logic of every endpoint.
///
/// Creation payload:
///   {"schema_version": 1, "dataset": "data.jsonl", "backbone": "b.json" (optional),
///    "config": {"active.budget": 64, "seed": 3, ...}}
/// Keys in "config" follow the CLI config schema. Relative paths resolve
/// against data_dir. Sessions persist under data_dir/sessions after every
/// label and are restored on construction by replaying recorded answers.
class SessionManager {
 public:
  explicit SessionManager(ServiceOptions options);
  ~SessionManager();
  SessionManager(const SessionManager&) = delete;
  SessionManager& operator=(const SessionManager&) = delete;

  ServiceResponse create_session(const Json& payload, const std::optional<std::string>& idempotency_key);
  ServiceResponse next_query(const std::string& session_id);
  ServiceResponse submit_label(const std::string& session_id, const Json& body);
  ServiceResponse stats(const std::string& session_id) const;
  ServiceResponse abort(const std::string& session_id);
  ServiceResponse resume(const std::string& session_id);
  ServiceResponse health() const;

  /// Serialized ensemble of a session, for read-only checks.
  std::optional<std::string> ensemble_state(const std::string& session_id) const;
  std::size_t session_count() const;
  const ServiceOptions& options() const { return options_; }

  struct Session;

 private:
  std::shared_ptr<Session> find(const std::string& id) const;
  std::shared_ptr<const PreferenceDataset> dataset_for(const std::filesystem::path& path);
  std::shared_ptr<Session> build(const std::string& id, const Json& record);
  void persist(const Session& s) const;
  void load_all();

  ServiceOptions options_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::map<std::string, std::string> idempotency_;
  std::map<std::string, std::shared_ptr<const PreferenceDataset>> datasets_;
};

/// HTTP front end over a SessionManager.
class HttpService {
 public:
  explicit HttpService(SessionManager& manager);
  ~HttpService();

  /// Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host, int port);
  /// Binds and serves on the calling thread until stop().
  bool listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace preflab
