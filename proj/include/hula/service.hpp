#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hula/agent.hpp"
#include "hula/learner.hpp"
#include "hula/oracle.hpp"

namespace hula {

inline constexpr int kWireVersion = 1;

nlohmann::json observation_to_json(const Observation& obs);
nlohmann::json request_to_json(const ExpertRequest& req);

/// One deployment episode driven step by step from outside. Mutations are
/// serialized; views may be taken concurrently.
class Session {
 public:
  Session(std::string id, std::shared_ptr<const GridMap> map, std::shared_ptr<const TableFile> tables,
          double eps, std::uint64_t seed);

  const std::string& id() const { return id_; }
  std::uint64_t seed() const { return seed_; }

  nlohmann::json view() const;
  nlohmann::json advance();
  nlohmann::json submit_expert_action(std::string_view action);
  EpisodeTrace trace() const;

  /// Serialized events with sequence number >= `from`, waiting up to `timeout`
  /// when none are available yet.
  std::vector<std::string> events_since(std::size_t from, std::chrono::milliseconds timeout) const;
  bool finished() const;
  void wake_listeners() const;

 private:
  nlohmann::json view_locked() const;
  void publish_locked(std::string_view type);

  std::string id_;
  std::shared_ptr<const GridMap> map_;
  std::shared_ptr<const TableFile> tables_;
  std::uint64_t seed_;
  VarianceMap variance_;
  EpisodeRunner runner_;
  mutable std::shared_mutex mu_;
  mutable std::condition_variable_any changed_;
  std::vector<std::string> events_;
};

/// Owns the known maps, loads table files from one directory, and hands out
/// sessions by id.
class SessionManager {
 public:
  SessionManager(std::map<std::string, std::shared_ptr<const GridMap>> maps, std::string tables_dir);
  /// Every `*.map` file in `dir`, keyed by its `name:` header.
  static std::map<std::string, std::shared_ptr<const GridMap>> load_maps(const std::string& dir);

  /// Unknown map or table file -> NotFound; table trained on another map,
  /// a path escaping the table directory, or a negative threshold -> ValidationError.
  std::string create_session(const std::string& map_name, const std::string& table_name, double eps,
                             std::uint64_t seed);
  std::shared_ptr<Session> get(const std::string& id) const;  // NotFound
  std::vector<std::string> session_ids() const;
  void wake_all() const;

 private:
  std::shared_ptr<const TableFile> table(const std::string& name);

  std::map<std::string, std::shared_ptr<const GridMap>> maps_;
  std::string tables_dir_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::map<std::string, std::shared_ptr<const TableFile>> table_cache_;
  std::uint64_t next_ = 0;
  std::uint64_t salt_;
};

/// HTTP front end:
///   PUT  /sessions                     {"version","map","table","epsilon","seed"}
///   GET  /sessions/{id}
///   POST /sessions/{id}/advance
///   POST /sessions/{id}/expert-action  {"version","action"}
///   GET  /sessions/{id}/events         server-sent events
///   GET  /sessions/{id}/trace          JSON-lines trace
class HttpService {
 public:
  explicit HttpService(SessionManager& sessions);
  ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  /// Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host, int port);
  /// Binds and serves on the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace hula
