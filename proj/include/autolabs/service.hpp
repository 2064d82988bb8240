#pragma once

// HTTP+JSON session service with a server-sent event stream. Each session is
// driven by one actor that owns its log and processes a mailbox in order.

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "autolabs/config.hpp"
#include "autolabs/eval.hpp"
#include "autolabs/fixtures.hpp"
#include "autolabs/hardware.hpp"
#include "autolabs/orchestrator.hpp"
#include "autolabs/store.hpp"

namespace autolabs::svc {

using nlohmann::json;

/// Maps to 422.
class BadRequest : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Maps to 409.
class Conflict : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Builds the chat client for a session from its creation request.
using ClientFactory = std::function<std::shared_ptr<llm::ChatClient>(const json& request)>;

/// A fresh ScriptedStub per session: the request's inline "stub" object, else
/// the experiment fixture's stub.json.
inline ClientFactory stub_factory(AppConfig config) {
  return [config](const json& request) -> std::shared_ptr<llm::ChatClient> {
    if (request.contains("stub")) return std::make_shared<llm::ScriptedStub>(llm::ScriptedStub::from_json(request["stub"]));
    if (request.contains("experiment")) {
      auto f = config.fixture(request["experiment"].get<std::string>());
      auto path = f.dir / "stub.json";
      if (!std::filesystem::exists(path)) throw BadRequest("experiment '" + f.id + "' has no stub script");
      return std::make_shared<llm::ScriptedStub>(llm::ScriptedStub::from_json(json::parse(detail::read_file(path))));
    }
    throw BadRequest("the stub client needs an \"experiment\" or an inline \"stub\"");
  };
}

inline ClientFactory shared_factory(std::shared_ptr<llm::ChatClient> client) {
  return [client](const json&) { return client; };
}

// ---------------------------------------------------------------------------
// Creation requests

struct CreateRequest {
  std::string description;
  orch::ArchitectureConfig config;
  orch::Cognition cognition = orch::Cognition::FR;
  orch::Mode mode = orch::Mode::HumanInLoop;
  std::optional<Fixture> experiment;
  std::optional<std::string> ground_truth;
};

inline CreateRequest parse_create(const json& body, const AppConfig& app) {
  if (!body.is_object()) throw BadRequest("body must be a JSON object");
  CreateRequest r;
  try {
    if (body.contains("experiment")) {
      try {
        r.experiment = app.fixture(body["experiment"].get<std::string>());
      } catch (const std::runtime_error& e) {
        throw BadRequest(e.what());
      }
      r.description = detail::read_file(r.experiment->dir / "description.txt");
      while (!r.description.empty() && (r.description.back() == '\n' || r.description.back() == '\r')) r.description.pop_back();
      r.ground_truth = r.experiment->id;
    }
    if (body.contains("description")) r.description = body["description"].get<std::string>();
    if (r.description.empty()) throw BadRequest("\"description\" is required");
    auto cognition = body.value("cognition", std::string("FR"));
    auto c = orch::parse_cognition(cognition);
    if (!c) throw BadRequest("unknown cognition '" + cognition + "'");
    r.cognition = *c;
    r.config = orch::ArchitectureConfig::parse(body.value("config", std::string("MA-TU-GSC")), *c);
    auto mode = body.value("mode", std::string("interactive"));
    if (mode == "auto") r.mode = orch::Mode::FullyAutomated;
    else if (mode == "interactive") r.mode = orch::Mode::HumanInLoop;
    else throw BadRequest("mode must be auto or interactive");
    if (body.contains("ground_truth")) r.ground_truth = body["ground_truth"].get<std::string>();
  } catch (const json::exception& e) {
    throw BadRequest(std::string("bad field type: ") + e.what());
  } catch (const orch::InvalidConfig& e) {
    throw BadRequest(e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Session actor

struct View {
  std::string session_id;
  std::string created_at;
  json request;
  orch::SessionState state;
  long last_seq = 0;
};

inline json to_json(const View& v) {
  return {{"session_id", v.session_id},
          {"created_at", v.created_at},
          {"request", v.request},
          {"status", orch::to_string(v.state.status)},
          {"last_event", v.last_seq},
          {"state", orch::to_json(v.state)}};
}

class SessionActor {
 public:
  SessionActor(store::SessionStore& store, store::SessionRecord rec, std::vector<store::Event> events,
               ClientFactory factory, orch::SessionOptions options)
      : store_(store), rec_(std::move(rec)), factory_(std::move(factory)), options_(std::move(options)) {
    for (auto& e : events) events_.push_back(store::to_json(e));
    publish();
    worker_ = std::thread([this] { loop(); });
  }

  ~SessionActor() { shutdown(); }

  SessionActor(const SessionActor&) = delete;
  SessionActor& operator=(const SessionActor&) = delete;

  void shutdown() {
    {
      std::lock_guard lock(mutex_);
      if (stopping_) return;
      stopping_ = true;
    }
    jobs_cv_.notify_all();
    events_cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  /// Lock-free snapshot of the latest committed state.
  std::shared_ptr<const View> view() const { return std::atomic_load(&view_); }

  /// Runs `job` on the session's worker, after every job posted before it.
  void post(std::function<void()> job) {
    {
      std::lock_guard lock(mutex_);
      if (stopping_) throw Conflict("session is shutting down");
      jobs_.push_back(std::move(job));
    }
    jobs_cv_.notify_one();
  }

  /// Resumes an active session.
  void start() {
    post([this] { drive(); });
  }

  /// Accepts user text for an awaiting_user session and resumes it.
  void message(std::string text) {
    if (auto status = view()->state.status; status != orch::Status::awaiting_user)
      throw Conflict("session is " + std::string(orch::to_string(status)) + ", not awaiting_user");
    call([&] {
      if (rec_.state.status != orch::Status::awaiting_user)
        throw Conflict("session is " + std::string(orch::to_string(rec_.state.status)) + ", not awaiting_user");
      auto next = rec_.state;
      next.transcript.push_back(orch::detail::user_message(std::move(text)));
      next.status = orch::Status::active;
      commit(next);
    });
    post([this] { drive(); });
  }

  void tags(const json& body, const PropertyProvider& props) {
    call([&] {
      if (rec_.state.status != orch::Status::awaiting_tags)
        throw Conflict("session is " + std::string(orch::to_string(rec_.state.status)) + ", not awaiting_tags");
      StepTags tags;
      try {
        tags = step_tags_from_json(body.contains("tags") ? body["tags"] : body);
      } catch (const std::exception& e) {
        throw BadRequest(std::string("bad tag map: ") + e.what());
      }
      try {
        commit(orch::submit_tags(rec_.state, tags, props));
      } catch (const InvalidTagSet& e) {
        throw BadRequest(e.what());
      }
    });
  }

  /// Events with seq > after; blocks up to `wait` for new ones. Empty when
  /// none arrived or the actor is stopping.
  std::vector<json> events_after(long after, std::chrono::milliseconds wait) {
    std::unique_lock lock(events_mutex_);
    events_cv_.wait_for(lock, wait, [&] { return stopping() || last_seq_locked() > after; });
    std::vector<json> out;
    for (const auto& e : events_)
      if (e["seq"].get<long>() > after) out.push_back(e);
    return out;
  }

  bool stopping() const {
    std::lock_guard lock(mutex_);
    return stopping_;
  }

 private:
  long last_seq_locked() const { return events_.empty() ? 0 : events_.back()["seq"].get<long>(); }

  /// Runs `fn` on the worker and rethrows its exception on the caller.
  void call(const std::function<void()>& fn) {
    std::promise<void> done;
    auto result = done.get_future();
    post([&] {
      try {
        fn();
        done.set_value();
      } catch (...) {
        done.set_exception(std::current_exception());
      }
    });
    result.get();
  }

  void loop() {
    for (;;) {
      std::function<void()> job;
      {
        std::unique_lock lock(mutex_);
        jobs_cv_.wait(lock, [&] { return stopping_ || !jobs_.empty(); });
        if (stopping_ && jobs_.empty()) return;
        job = std::move(jobs_.front());
        jobs_.pop_front();
      }
      job();
    }
  }

  void drive() {
    try {
      if (!client_) client_ = factory_(rec_.request);
      while (rec_.state.status == orch::Status::active && !stopping())
        commit(orch::step_session(rec_.state, *client_, options_));
    } catch (const std::exception& e) {
      if (orch::phase(rec_.state.status) < orch::phase(orch::Status::done)) {
        auto next = rec_.state;
        next.status = orch::Status::failed;
        next.failure = std::string("Internal: ") + e.what();
        try {
          commit(next);
        } catch (...) {
        }
      }
    }
  }

  void commit(const orch::SessionState& next) {
    bool forward = orch::phase(next.status) >= orch::phase(rec_.state.status);
    if (!forward) throw std::logic_error("status may not move backward");
    auto event = store_.append(rec_, next);
    if (!event) return;
    {
      std::lock_guard lock(events_mutex_);
      events_.push_back(store::to_json(*event));
    }
    publish();
    events_cv_.notify_all();
  }

  void publish() {
    auto v = std::make_shared<View>(View{rec_.session_id, rec_.created_at, rec_.request, rec_.state, rec_.last_seq});
    std::atomic_store(&view_, std::shared_ptr<const View>(std::move(v)));
  }

  store::SessionStore& store_;
  store::SessionRecord rec_;  // worker-owned
  ClientFactory factory_;
  orch::SessionOptions options_;
  std::shared_ptr<llm::ChatClient> client_;
  std::shared_ptr<const View> view_;

  mutable std::mutex mutex_;
  std::condition_variable jobs_cv_;
  std::deque<std::function<void()>> jobs_;
  bool stopping_ = false;

  std::mutex events_mutex_;
  std::condition_variable events_cv_;
  std::vector<json> events_;

  std::thread worker_;
};

// ---------------------------------------------------------------------------
// Service

class Service {
 public:
  Service(AppConfig config, store::SessionStore& store, ClientFactory factory,
          const PropertyProvider& props = StaticTable::bundled())
      : config_(std::move(config)), store_(store), factory_(std::move(factory)), props_(props) {
    routes();
  }

  ~Service() { stop(); }

  /// Reopens every session in the log directory; active ones resume.
  /// Returns the ids that could not be restored.
  std::vector<std::string> recover() {
    std::vector<std::string> failed;
    for (const auto& id : store_.list()) {
      try {
        auto [rec, events] = store_.load(id);
        auto opts = options_for(rec.request);
        bool resume = rec.state.status == orch::Status::active;
        auto actor = std::make_shared<SessionActor>(store_, std::move(rec), std::move(events), factory_, opts);
        if (resume) actor->start();
        std::unique_lock lock(sessions_mutex_);
        sessions_[id] = std::move(actor);
      } catch (const std::exception&) {
        failed.push_back(id);
      }
    }
    return failed;
  }

  // Direct API; the HTTP handlers are thin wrappers over these.

  json create(const json& body) {
    auto req = parse_create(body, config_);
    json request = body;
    if (req.ground_truth) request["ground_truth"] = *req.ground_truth;
    auto client = factory_(request);
    auto models = orch::ModelAssignment::for_cognition(req.cognition, config_.models);
    auto opts = options_for(request);
    auto state = orch::new_session(req.description, req.config, models, req.mode, opts);
    auto rec = store_.create(state, request);
    auto id = rec.session_id;
    std::vector<store::Event> events{store::created_event(rec)};
    auto actor = std::make_shared<SessionActor>(store_, std::move(rec), std::move(events),
                                                [client](const json&) { return client; }, opts);
    {
      std::unique_lock lock(sessions_mutex_);
      sessions_[id] = actor;
    }
    actor->start();
    return {{"session_id", id}, {"status", orch::to_string(state.status)}};
  }

  std::shared_ptr<SessionActor> find(const std::string& id) const {
    std::shared_lock lock(sessions_mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw store::UnknownSession(id);
    return it->second;
  }

  json get(const std::string& id) const { return to_json(*find(id)->view()); }

  json list() const {
    json out = json::array();
    std::shared_lock lock(sessions_mutex_);
    for (const auto& [id, actor] : sessions_) {
      auto v = actor->view();
      out.push_back({{"session_id", id}, {"created_at", v->created_at}, {"status", orch::to_string(v->state.status)}});
    }
    return out;
  }

  void message(const std::string& id, const json& body) {
    auto actor = find(id);
    if (!body.is_object() || !body.contains("text") || !body["text"].is_string() || body["text"].get<std::string>().empty())
      throw BadRequest("body must be {\"text\": \"...\"}");
    actor->message(body["text"].get<std::string>());
  }

  void tags(const std::string& id, const json& body) {
    auto actor = find(id);
    if (!body.is_object()) throw BadRequest("body must be a JSON object");
    actor->tags(body, props_);
  }

  /// Current tags (suggested defaults before submission) and the rule set.
  json tag_state(const std::string& id) const {
    auto v = find(id)->view();
    if (!v->state.finalized) throw Conflict("session has no final steps yet");
    auto tags = v->state.tags ? *v->state.tags : default_tags(*v->state.finalized, props_);
    json steps = json::array();
    std::size_t i = 0;
    for (const auto& s : v->state.finalized->steps) steps.push_back({{"index", i++}, {"text", render_step(s)}});
    return {{"steps", steps}, {"tags", autolabs::to_json(tags)}, {"rules", tag_rules()}};
  }

  json metrics(const std::string& id, std::optional<std::string> ground_truth) const {
    auto v = find(id)->view();
    if (!ground_truth && v->request.contains("ground_truth")) ground_truth = v->request["ground_truth"].get<std::string>();
    if (!ground_truth) throw BadRequest("no ground truth selected");
    if (!v->state.finalized) throw Conflict("session has no final steps yet");
    Fixture gt;
    try {
      gt = config_.fixture(*ground_truth);
    } catch (const std::runtime_error& e) {
      throw BadRequest(e.what());
    }
    auto report = eval::to_json(eval::evaluate(*v->state.finalized, gt.procedure));
    report["ground_truth"] = gt.id;
    return report;
  }

  std::string hardware(const std::string& id) const {
    auto v = find(id)->view();
    if (v->state.status != orch::Status::done || !v->state.finalized)
      throw Conflict("session is " + std::string(orch::to_string(v->state.status)) + ", not done");
    auto tags = v->state.tags ? *v->state.tags : default_tags(*v->state.finalized, props_);
    try {
      return hw::emit(*v->state.finalized, tags, props_);
    } catch (const hw::ValidationFailed& e) {
      throw BadRequest(e.what());
    }
  }

  // Server lifecycle

  httplib::Server& server() { return server_; }

  int bind(const std::string& host, int port) {
    if (port == 0) return server_.bind_to_any_port(host);
    return server_.bind_to_port(host, port) ? port : -1;
  }

  bool listen() { return server_.listen_after_bind(); }

  void stop() {
    if (stopped_.exchange(true)) return;
    std::vector<std::shared_ptr<SessionActor>> actors;
    {
      std::unique_lock lock(sessions_mutex_);
      for (auto& [id, a] : sessions_) actors.push_back(a);
    }
    for (auto& a : actors) a->shutdown();
    server_.stop();
  }

 private:
  orch::SessionOptions options_for(const json& request) const {
    auto opts = config_.session_options();
    opts.props = &props_;
    if (request.contains("experiment")) {
      try {
        opts.plates = config_.fixture(request["experiment"].get<std::string>()).plates;
      } catch (const std::exception&) {
      }
    }
    return opts;
  }

  static void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, std::string_view kind, const std::string& message) {
    send_json(res, status, {{"error", kind}, {"message", message}});
  }

  static json body_of(const httplib::Request& req) {
    auto j = json::parse(req.body.empty() ? "{}" : req.body, nullptr, false);
    if (j.is_discarded()) throw BadRequest("body is not valid JSON");
    return j;
  }

  template <typename F>
  static void guarded(httplib::Response& res, F&& fn) {
    try {
      fn();
    } catch (const store::UnknownSession& e) {
      send_error(res, 404, "not_found", e.what());
    } catch (const Conflict& e) {
      send_error(res, 409, "conflict", e.what());
    } catch (const BadRequest& e) {
      send_error(res, 422, "invalid", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  }

  void routes() {
    const std::string id = "/sessions/([A-Za-z0-9_-]+)";
    server_.Get("/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"ok", true}}); });
    server_.Get("/tag-rules", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, tag_rules()); });
    server_.Get("/configurations", [](const httplib::Request&, httplib::Response& res) {
      json out = json::array();
      for (const auto& c : orch::all_configurations()) out.push_back(c.label());
      send_json(res, 200, out);
    });
    server_.Get("/experiments", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, experiment_ids()); });
    server_.Get("/sessions", [this](const httplib::Request&, httplib::Response& res) { send_json(res, 200, list()); });
    server_.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 201, create(body_of(req))); });
    });
    server_.Get(id, [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, get(req.matches[1])); });
    });
    server_.Post(id + "/messages", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        std::string sid = req.matches[1];
        find(sid);
        auto body = body_of(req);
        message(sid, body);
        send_json(res, 202, {{"session_id", sid}, {"accepted", true}});
      });
    });
    server_.Get(id + "/tags", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, tag_state(req.matches[1])); });
    });
    server_.Post(id + "/tags", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        std::string sid = req.matches[1];
        find(sid);
        auto body = body_of(req);
        tags(sid, body);
        send_json(res, 200, get(sid));
      });
    });
    server_.Get(id + "/metrics", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        std::optional<std::string> gt;
        if (req.has_param("ground_truth")) gt = req.get_param_value("ground_truth");
        send_json(res, 200, metrics(req.matches[1], gt));
      });
    });
    server_.Get(id + "/hardware", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        std::string sid = req.matches[1];
        res.set_content(hardware(sid), "application/xml");
        res.set_header("Content-Disposition", "attachment; filename=\"" + sid + ".xml\"");
      });
    });
    server_.Get(id + "/events", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto actor = find(req.matches[1]);
        long after = 0;
        try {
          if (req.has_header("Last-Event-ID")) after = std::stol(req.get_header_value("Last-Event-ID"));
          else if (req.has_param("after")) after = std::stol(req.get_param_value("after"));
        } catch (const std::exception&) {
          throw BadRequest("event id must be an integer");
        }
        auto cursor = std::make_shared<long>(after);
        res.set_header("Cache-Control", "no-cache");
        res.set_chunked_content_provider("text/event-stream", [this, actor, cursor](std::size_t, httplib::DataSink& sink) {
          auto batch = actor->events_after(*cursor, std::chrono::milliseconds(250));
          for (const auto& e : batch) {
            *cursor = e["seq"].get<long>();
            auto chunk = "id: " + std::to_string(*cursor) + "\nevent: " + e["type"].get<std::string>() +
                         "\ndata: " + e.dump() + "\n\n";
            if (!sink.write(chunk.data(), chunk.size())) return false;
          }
          auto v = actor->view();
          bool terminal = orch::phase(v->state.status) == orch::phase(orch::Status::done);
          if ((terminal && *cursor >= v->last_seq) || actor->stopping() || stopped_) {
            sink.done();
            return true;
          }
          if (batch.empty() && !sink.is_writable()) return false;
          return true;
        });
      });
    });
  }

  AppConfig config_;
  store::SessionStore& store_;
  ClientFactory factory_;
  const PropertyProvider& props_;
  httplib::Server server_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<SessionActor>> sessions_;
  std::atomic<bool> stopped_{false};
};

}  // namespace autolabs::svc
