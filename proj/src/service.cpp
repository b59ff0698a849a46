#include "hula/service.hpp"

#include <atomic>
#include <filesystem>
#include <random>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "hula/errors.hpp"
#include "hula/harness.hpp"
#include "hula/text.hpp"

namespace hula {

namespace {

char patch_char(PatchCell c) {
  switch (c) {
    case PatchCell::Free: return '.';
    case PatchCell::Wall: return '#';
    case PatchCell::Trap: return 'T';
    case PatchCell::Goal: return 'G';
    case PatchCell::OutOfBounds: return 'X';
  }
  return '?';
}

nlohmann::json epsilon_json(double eps) {
  if (std::isinf(eps)) return "inf";
  return eps;
}

std::string_view status_name(EpisodeRunner::Status s) {
  switch (s) {
    case EpisodeRunner::Status::Running: return "running";
    case EpisodeRunner::Status::AwaitingExpert: return "awaiting_expert";
    case EpisodeRunner::Status::Finished: return "finished";
  }
  return "?";
}

}  // namespace

nlohmann::json observation_to_json(const Observation& obs) {
  if (const auto* full = std::get_if<FullStateObs>(&obs)) {
    return {{"kind", "full"}, {"x", full->pos.x}, {"y", full->pos.y}};
  }
  const auto& patch = std::get<PatchObs>(obs);
  nlohmann::json rows = nlohmann::json::array();
  for (int dy = -kPatchRadius; dy <= kPatchRadius; ++dy) {
    std::string row;
    for (int dx = -kPatchRadius; dx <= kPatchRadius; ++dx) row += patch_char(patch.at(dx, dy));
    rows.push_back(row);
  }
  return {{"kind", "patch"}, {"rows", rows}};
}

nlohmann::json request_to_json(const ExpertRequest& req) {
  return {{"episode_id", req.episode_id},
          {"state", {{"x", req.state.x}, {"y", req.state.y}}},
          {"observation", observation_to_json(req.observation)},
          {"variance", req.variance},
          {"step_index", req.step_index}};
}

// ---------------------------------------------------------------- session

Session::Session(std::string id, std::shared_ptr<const GridMap> map, std::shared_ptr<const TableFile> tables,
                 double eps, std::uint64_t seed)
    : id_(std::move(id)),
      map_(std::move(map)),
      tables_(std::move(tables)),
      seed_(seed),
      variance_(learned_variance_map(*map_, tables_->q, tables_->m, tables_->obs_mode)),
      runner_(map_, tables_->params, tables_->q, tables_->m, tables_->obs_mode, eps, seed, id_) {
  publish_locked("created");
}

nlohmann::json Session::view_locked() const {
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& row : map_->rows()) grid.push_back(row);

  nlohmann::json heat = nlohmann::json::array();
  for (int y = 0; y < variance_.height(); ++y) {
    nlohmann::json row = nlohmann::json::array();
    for (int x = 0; x < variance_.width(); ++x) {
      if (variance_.domain(y, x)) {
        row.push_back(variance_.values(y, x));
      } else {
        row.push_back(nullptr);
      }
    }
    heat.push_back(row);
  }

  const EpisodeTrace& t = runner_.trace();
  nlohmann::json steps = nlohmann::json::array();
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    nlohmann::json s = step_to_json(t.steps[i]);
    s["index"] = i;
    steps.push_back(std::move(s));
  }
  nlohmann::json trace = trace_summary_json(t);
  trace["steps"] = std::move(steps);

  const Coord pos = runner_.env().pos;
  return {{"version", kWireVersion},
          {"id", id_},
          {"map", map_->name()},
          {"observation", obs_mode_name(tables_->obs_mode)},
          {"status", status_name(runner_.status())},
          {"epsilon", epsilon_json(runner_.epsilon())},
          {"seed", seed_},
          {"width", map_->width()},
          {"height", map_->height()},
          {"grid", grid},
          {"agent", {{"x", pos.x}, {"y", pos.y}}},
          {"variance_map", heat},
          {"pending_request", runner_.pending() ? request_to_json(*runner_.pending()) : nlohmann::json()},
          {"trace", trace}};
}

void Session::publish_locked(std::string_view type) {
  nlohmann::json ev = {{"version", kWireVersion},
                       {"seq", events_.size()},
                       {"event", type},
                       {"session", view_locked()}};
  events_.push_back(ev.dump());
  changed_.notify_all();
}

nlohmann::json Session::view() const {
  std::shared_lock lock(mu_);
  return view_locked();
}

nlohmann::json Session::advance() {
  std::unique_lock lock(mu_);
  const auto status = runner_.advance();
  publish_locked(status == EpisodeRunner::Status::AwaitingExpert ? "expert_request"
                 : status == EpisodeRunner::Status::Finished     ? "finished"
                                                                 : "step");
  return view_locked();
}

nlohmann::json Session::submit_expert_action(std::string_view action) {
  const auto a = parse_action(action);
  if (!a) throw ValidationError("invalid action '" + std::string(action) + "'; expected Up, Down, Left or Right");
  std::unique_lock lock(mu_);
  const auto status = runner_.submit_expert(*a);
  publish_locked(status == EpisodeRunner::Status::Finished ? "finished" : "step");
  return view_locked();
}

EpisodeTrace Session::trace() const {
  std::shared_lock lock(mu_);
  return runner_.trace();
}

bool Session::finished() const {
  std::shared_lock lock(mu_);
  return runner_.status() == EpisodeRunner::Status::Finished;
}

std::vector<std::string> Session::events_since(std::size_t from, std::chrono::milliseconds timeout) const {
  std::shared_lock lock(mu_);
  changed_.wait_for(lock, timeout, [&] { return events_.size() > from; });
  if (from >= events_.size()) return {};
  return {events_.begin() + static_cast<std::ptrdiff_t>(from), events_.end()};
}

void Session::wake_listeners() const { changed_.notify_all(); }

// ---------------------------------------------------------------- manager

SessionManager::SessionManager(std::map<std::string, std::shared_ptr<const GridMap>> maps, std::string tables_dir)
    : maps_(std::move(maps)), tables_dir_(std::move(tables_dir)), salt_(std::random_device{}()) {
  salt_ = (salt_ << 32) ^ std::random_device{}();
}

std::map<std::string, std::shared_ptr<const GridMap>> SessionManager::load_maps(const std::string& dir) {
  namespace fs = std::filesystem;
  std::map<std::string, std::shared_ptr<const GridMap>> out;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (entry.path().extension() != ".map") continue;
    auto map = std::make_shared<const GridMap>(load_map(entry.path().string()));
    out[map->name()] = std::move(map);
  }
  if (ec) throw IoError("cannot list map directory " + dir + ": " + ec.message());
  return out;
}

std::shared_ptr<const TableFile> SessionManager::table(const std::string& name) {
  namespace fs = std::filesystem;
  const fs::path rel(name);
  if (name.empty() || rel.is_absolute() || rel.has_root_name())
    throw ValidationError("table must be a file name inside the table directory");
  for (const auto& part : rel) {
    if (part == "..") throw ValidationError("table path may not leave the table directory");
  }
  if (auto it = table_cache_.find(name); it != table_cache_.end()) return it->second;
  const fs::path path = fs::path(tables_dir_) / rel;
  if (!fs::is_regular_file(path)) throw NotFound("unknown table file '" + name + "'");
  auto t = std::make_shared<const TableFile>(load_tables(path.string()));
  table_cache_[name] = t;
  return t;
}

std::string SessionManager::create_session(const std::string& map_name, const std::string& table_name,
                                           double eps, std::uint64_t seed) {
  if (!(eps >= 0.0)) throw ValidationError("epsilon must be >= 0");
  std::unique_lock lock(mu_);
  auto mit = maps_.find(map_name);
  if (mit == maps_.end()) throw NotFound("unknown map '" + map_name + "'");
  auto tables = table(table_name);
  if (tables->map_name != map_name)
    throw ValidationError("table was trained on '" + tables->map_name + "', not '" + map_name + "'");
  std::string id;
  do {
    id = hex64(derive_seed(salt_, next_++));
  } while (sessions_.count(id));
  sessions_[id] = std::make_shared<Session>(id, mit->second, std::move(tables), eps, seed);
  return id;
}

std::shared_ptr<Session> SessionManager::get(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFound("unknown session '" + id + "'");
  return it->second;
}

std::vector<std::string> SessionManager::session_ids() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, s] : sessions_) out.push_back(id);
  return out;
}

void SessionManager::wake_all() const {
  std::shared_lock lock(mu_);
  for (const auto& [id, s] : sessions_) s->wake_listeners();
}

// ---------------------------------------------------------------- http

struct HttpService::Impl {
  SessionManager& sessions;
  httplib::Server server;
  std::thread thread;
  std::atomic<bool> stopping{false};

  explicit Impl(SessionManager& s) : sessions(s) {}
};

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view kind, const std::string& message) {
  send_json(res, status, {{"version", kWireVersion}, {"error", kind}, {"message", message}});
}

template <typename F>
void guarded(httplib::Response& res, F&& body) {
  try {
    body();
  } catch (const NotFound& e) {
    send_error(res, 404, "NotFound", e.what());
  } catch (const Conflict& e) {
    send_error(res, 409, "Conflict", e.what());
  } catch (const ValidationError& e) {
    send_error(res, 400, "ValidationError", e.what());
  } catch (const ParseError& e) {
    send_error(res, 400, "ParseError", e.what());
  } catch (const nlohmann::json::exception& e) {
    send_error(res, 400, "ParseError", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "InternalError", e.what());
  }
}

nlohmann::json parse_body(const httplib::Request& req) {
  auto body = nlohmann::json::parse(req.body.empty() ? "{}" : req.body);
  if (!body.is_object()) throw ValidationError("request body must be a JSON object");
  if (body.contains("version") && body["version"] != kWireVersion)
    throw ValidationError("unsupported wire version " + body["version"].dump());
  return body;
}

double parse_epsilon(const nlohmann::json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) return parse_real(v.get<std::string>());
  throw ValidationError("epsilon must be a number or \"inf\"");
}

}  // namespace

HttpService::HttpService(SessionManager& sessions) : impl_(std::make_unique<Impl>(sessions)) {
  auto& srv = impl_->server;
  Impl* impl = impl_.get();

  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type, Last-Event-ID"},
                           {"Access-Control-Allow-Methods", "GET, PUT, POST, OPTIONS"}});
  srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv.Put("/sessions", [impl](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = parse_body(req);
      const std::string id = impl->sessions.create_session(
          body.at("map").get<std::string>(), body.at("table").get<std::string>(),
          body.contains("epsilon") ? parse_epsilon(body["epsilon"]) : kNeverCall,
          body.value("seed", std::uint64_t{0}));
      send_json(res, 201, impl->sessions.get(id)->view());
    });
  });

  srv.Get(R"(/sessions/([0-9a-f]+))", [impl](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, impl->sessions.get(req.matches[1])->view()); });
  });

  srv.Post(R"(/sessions/([0-9a-f]+)/advance)", [impl](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      parse_body(req);
      send_json(res, 200, impl->sessions.get(req.matches[1])->advance());
    });
  });

  srv.Post(R"(/sessions/([0-9a-f]+)/expert-action)",
           [impl](const httplib::Request& req, httplib::Response& res) {
             guarded(res, [&] {
               const auto body = parse_body(req);
               const auto& action = body.at("action");
               if (!action.is_string()) throw ValidationError("action must be an action name");
               send_json(res, 200, impl->sessions.get(req.matches[1])->submit_expert_action(action.get<std::string>()));
             });
           });

  srv.Get(R"(/sessions/([0-9a-f]+)/trace)", [impl](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto session = impl->sessions.get(req.matches[1]);
      std::ostringstream out;
      write_trace(out, session->trace(), {{"session", session->id()}, {"seed", std::to_string(session->seed())}});
      res.set_content(out.str(), "application/x-ndjson");
    });
  });

  srv.Get(R"(/sessions/([0-9a-f]+)/events)", [impl](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto session = impl->sessions.get(req.matches[1]);
      std::size_t from = 0;
      if (req.has_header("Last-Event-ID")) from = parse_integer<std::size_t>(req.get_header_value("Last-Event-ID")) + 1;
      auto cursor = std::make_shared<std::size_t>(from);
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider(
          "text/event-stream", [impl, session, cursor](std::size_t, httplib::DataSink& sink) {
            if (impl->stopping) return false;
            for (const std::string& ev : session->events_since(*cursor, std::chrono::milliseconds(250))) {
              const std::string frame = "id: " + std::to_string((*cursor)++) + "\ndata: " + ev + "\n\n";
              if (!sink.write(frame.data(), frame.size())) return false;
            }
            if (session->finished() && session->events_since(*cursor, std::chrono::milliseconds(0)).empty()) {
              sink.done();
            }
            return true;
          });
    });
  });
}

HttpService::~HttpService() { stop(); }

int HttpService::start(const std::string& host, int port) {
  auto& srv = impl_->server;
  int bound = port;
  if (port == 0) {
    bound = srv.bind_to_any_port(host);
  } else if (!srv.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  srv.wait_until_ready();
  return bound;
}

void HttpService::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) {
    if (impl_->stopping) return;
    throw IoError("cannot listen on " + host + ":" + std::to_string(port));
  }
}

void HttpService::stop() {
  if (!impl_) return;
  impl_->stopping = true;
  impl_->sessions.wake_all();
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace hula
