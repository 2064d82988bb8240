#pragma once

// Event-sourced session persistence: one newline-delimited JSON log per
// session under a directory.

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "autolabs/orchestrator.hpp"

namespace autolabs::store {

using nlohmann::json;

class CorruptLog : public std::runtime_error {
 public:
  CorruptLog(const std::string& what, long last_good_seq)
      : std::runtime_error(what + " (last good event " + std::to_string(last_good_seq) + ")"), last_good_seq_(last_good_seq) {}
  long last_good_seq() const { return last_good_seq_; }

 private:
  long last_good_seq_;
};

class UnknownSession : public std::out_of_range {
 public:
  explicit UnknownSession(const std::string& id) : std::out_of_range("unknown session '" + id + "'") {}
};

using IdGenerator = std::function<std::string()>;
using Clock = std::function<std::string()>;

inline IdGenerator random_ids() {
  auto rng = std::make_shared<std::mt19937_64>(std::random_device{}());
  auto mutex = std::make_shared<std::mutex>();
  return [rng, mutex] {
    std::lock_guard lock(*mutex);
    std::ostringstream out;
    out << std::hex << (*rng)() << (*rng)();
    return out.str().substr(0, 24);
  };
}

/// "s0001", "s0002", ... for tests.
inline IdGenerator sequential_ids(std::string prefix = "s") {
  auto n = std::make_shared<long>(0);
  auto mutex = std::make_shared<std::mutex>();
  return [n, mutex, prefix] {
    std::lock_guard lock(*mutex);
    auto digits = std::to_string(++*n);
    return prefix + std::string(digits.size() < 4 ? 4 - digits.size() : 0, '0') + digits;
  };
}

inline Clock utc_clock() {
  return [] {
    auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return std::string(buf);
  };
}

inline Clock fixed_clock(std::string stamp) {
  return [stamp] { return stamp; };
}

// ---------------------------------------------------------------------------
// Deltas

inline constexpr const char* kScalarFields[] = {"status", "turns", "tokens", "finalized", "tags", "self_check", "failure"};

/// Event payload turning `before` into `after`. Transcript, review and path
/// only grow.
inline json delta(const orch::SessionState& before, const orch::SessionState& after) {
  auto b = orch::to_json(before);
  auto a = orch::to_json(after);
  json d = json::object();
  for (auto key : {"transcript", "review", "path"}) {
    const auto& old_list = b[key];
    const auto& new_list = a[key];
    if (new_list.size() < old_list.size() ||
        !std::equal(old_list.begin(), old_list.end(), new_list.begin()))
      throw std::logic_error(std::string(key) + " must only grow");
    if (new_list.size() > old_list.size())
      d[key] = json(std::vector<json>(new_list.begin() + static_cast<long>(old_list.size()), new_list.end()));
  }
  json fields = json::object();
  for (auto key : kScalarFields)
    if (a[key] != b[key]) fields[key] = a[key];
  if (!fields.empty()) d["fields"] = fields;
  return d;
}

inline void apply_delta(json& state, const json& d) {
  for (auto key : {"transcript", "review", "path"})
    if (d.contains(key))
      for (const auto& item : d[key]) state[key].push_back(item);
  if (d.contains("fields"))
    for (const auto& [k, v] : d["fields"].items()) state[k] = v;
}

struct SessionRecord {
  std::string session_id;
  std::string created_at;
  json request;  // creation parameters
  orch::SessionState state;
  long last_seq = 0;
};

struct Event {
  long seq = 0;
  std::string type;  // created | delta
  json body;
};

inline json to_json(const Event& e) {
  json j{{"seq", e.seq}, {"type", e.type}};
  for (const auto& [k, v] : e.body.items()) j[k] = v;
  return j;
}

inline Event created_event(const SessionRecord& rec) {
  return {1, "created",
          {{"session_id", rec.session_id},
           {"created_at", rec.created_at},
           {"request", rec.request},
           {"state", orch::to_json(rec.state)}}};
}

/// Replays a log. A torn final line is dropped; damage anywhere else throws
/// CorruptLog.
inline std::pair<SessionRecord, std::vector<Event>> replay(std::istream& in, const std::string& id) {
  std::vector<std::string> lines;
  std::string line;
  bool last_terminated = true;
  while (std::getline(in, line)) {
    last_terminated = !in.eof();
    lines.push_back(line);
  }
  SessionRecord rec;
  rec.session_id = id;
  std::vector<Event> events;
  json state;
  long seq = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    bool final_line = i + 1 == lines.size();
    auto j = json::parse(lines[i], nullptr, false);
    bool ok = !j.is_discarded() && j.is_object() && j.value("seq", -1L) == seq + 1 && j.contains("type");
    if (ok && final_line && !last_terminated) ok = false;  // unterminated write
    if (!ok) {
      if (final_line && seq > 0) break;
      throw CorruptLog("session '" + id + "' log is damaged at line " + std::to_string(i + 1), seq);
    }
    Event e{j["seq"].get<long>(), j["type"].get<std::string>(), json::object()};
    for (const auto& [k, v] : j.items())
      if (k != "seq" && k != "type") e.body[k] = v;
    try {
      if (e.type == "created") {
        if (seq != 0) throw std::runtime_error("second created event");
        state = e.body.at("state");
        rec.created_at = e.body.at("created_at").get<std::string>();
        rec.request = e.body.value("request", json::object());
      } else if (e.type == "delta") {
        if (seq == 0) throw std::runtime_error("delta before created");
        apply_delta(state, e.body);
      } else {
        throw std::runtime_error("unknown event type '" + e.type + "'");
      }
    } catch (const std::exception& ex) {
      throw CorruptLog("session '" + id + "' event " + std::to_string(e.seq) + ": " + ex.what(), seq);
    }
    seq = e.seq;
    events.push_back(std::move(e));
  }
  if (seq == 0) throw CorruptLog("session '" + id + "' log has no events", 0);
  try {
    rec.state = orch::session_from_json(state);
  } catch (const std::exception& ex) {
    throw CorruptLog("session '" + id + "' state does not decode: " + ex.what(), seq);
  }
  rec.last_seq = seq;
  return {std::move(rec), std::move(events)};
}

/// Each session log has a single writer; callers serialize writes per session.
class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path dir, IdGenerator ids = random_ids(), Clock clock = utc_clock())
      : dir_(std::move(dir)), ids_(std::move(ids)), clock_(std::move(clock)) {
    std::filesystem::create_directories(dir_);
  }

  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path log_path(const std::string& id) const { return dir_ / (id + ".ndjson"); }

  bool exists(const std::string& id) const { return valid_id(id) && std::filesystem::exists(log_path(id)); }

  /// Writes the created event; ids are never reused.
  SessionRecord create(const orch::SessionState& state, json request = json::object()) {
    std::string id;
    do {
      id = ids_();
    } while (!valid_id(id) || std::filesystem::exists(log_path(id)));
    SessionRecord rec{id, clock_(), std::move(request), state, 1};
    write(id, created_event(rec), std::ios::trunc);
    return rec;
  }

  /// Appends the delta from `rec.state` to `next`; returns the event, or
  /// nothing when the state did not change.
  std::optional<Event> append(SessionRecord& rec, const orch::SessionState& next) {
    auto d = delta(rec.state, next);
    if (d.empty()) return std::nullopt;
    Event e{rec.last_seq + 1, "delta", d};
    write(rec.session_id, e, std::ios::app);
    rec.state = next;
    rec.last_seq = e.seq;
    return e;
  }

  SessionRecord restore(const std::string& id) const { return load(id).first; }

  std::pair<SessionRecord, std::vector<Event>> load(const std::string& id) const {
    if (!exists(id)) throw UnknownSession(id);
    std::ifstream in(log_path(id), std::ios::binary);
    return replay(in, id);
  }

  std::vector<std::string> list() const {
    std::vector<std::string> out;
    for (const auto& entry : std::filesystem::directory_iterator(dir_))
      if (entry.path().extension() == ".ndjson") out.push_back(entry.path().stem().string());
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  static bool valid_id(const std::string& id) {
    if (id.empty() || id.size() > 64) return false;
    return std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_'; });
  }

  void write(const std::string& id, const Event& e, std::ios::openmode mode) {
    std::ofstream out(log_path(id), std::ios::binary | mode);
    if (!out) throw std::runtime_error("cannot write session log " + log_path(id).string());
    out << to_json(e).dump() << '\n';
    out.flush();
    if (!out) throw std::runtime_error("write failed for session log " + log_path(id).string());
  }

  std::filesystem::path dir_;
  IdGenerator ids_;
  Clock clock_;
};

}  // namespace autolabs::store
