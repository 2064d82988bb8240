#pragma once

// Chat model access: message records, the ChatClient contract, a scripted
// replay client and an OpenAI-compatible HTTP client.

#include <chrono>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

namespace autolabs::llm {

using nlohmann::json;

enum class Role { system, user, assistant, tool };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    case Role::tool: return "tool";
  }
  return "";
}

inline Role parse_role(std::string_view s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  if (s == "tool") return Role::tool;
  throw std::invalid_argument("unknown role '" + std::string(s) + "'");
}

struct ToolCall {
  std::string id;
  std::string name;
  json arguments = json::object();
  bool operator==(const ToolCall&) const = default;
};

struct TokenUsage {
  long prompt = 0;
  long completion = 0;
  bool operator==(const TokenUsage&) const = default;
};

struct Message {
  Role role = Role::assistant;
  std::string content;
  std::optional<std::string> agent;  // producing/receiving agent, transcript only
  std::vector<ToolCall> tool_calls;
  std::optional<std::string> tool_call_id;  // for Role::tool
  std::optional<TokenUsage> usage;
  bool operator==(const Message&) const = default;
};

inline json to_json(const Message& m) {
  json j{{"role", std::string(to_string(m.role))}, {"content", m.content}};
  if (m.agent) j["agent"] = *m.agent;
  if (!m.tool_calls.empty()) {
    json calls = json::array();
    for (const auto& c : m.tool_calls) calls.push_back({{"id", c.id}, {"name", c.name}, {"arguments", c.arguments}});
    j["tool_calls"] = calls;
  }
  if (m.tool_call_id) j["tool_call_id"] = *m.tool_call_id;
  if (m.usage) j["usage"] = {{"prompt", m.usage->prompt}, {"completion", m.usage->completion}};
  return j;
}

inline Message message_from_json(const json& j) {
  Message m;
  m.role = parse_role(j.value("role", "assistant"));
  m.content = j.value("content", "");
  if (j.contains("agent") && j["agent"].is_string()) m.agent = j["agent"].get<std::string>();
  if (j.contains("tool_calls"))
    for (const auto& c : j["tool_calls"])
      m.tool_calls.push_back({c.value("id", ""), c.at("name").get<std::string>(), c.value("arguments", json::object())});
  if (j.contains("tool_call_id")) m.tool_call_id = j["tool_call_id"].get<std::string>();
  if (j.contains("usage")) m.usage = TokenUsage{j["usage"].value("prompt", 0L), j["usage"].value("completion", 0L)};
  return m;
}

struct ToolSchema {
  std::string name;
  std::string description;
  json parameters;  // JSON Schema object
};

/// What a request is for; scripted clients keep one queue per channel.
enum class Channel { route, agent, self_check, properties, tags };

inline std::string_view to_string(Channel c) {
  switch (c) {
    case Channel::route: return "route";
    case Channel::agent: return "agent";
    case Channel::self_check: return "self_check";
    case Channel::properties: return "properties";
    case Channel::tags: return "tags";
  }
  return "";
}

struct ChatRequest {
  Channel channel = Channel::agent;
  std::string model;
  std::optional<std::string> reasoning_effort;
  std::string system;
  std::vector<Message> messages;
  std::vector<ToolSchema> tools;
};

class LLMUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Implementations must be safe to call from concurrent sessions.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual Message complete(const ChatRequest& request) = 0;
};

/// Replays authored replies. Fixture:
/// {"route": [...], "agent": [...], "self_check": [...], "properties": [...], "tags": [...],
///  "on_exhausted": "repeat_last" | "cycle" | "error"}
/// where each reply is {"content": ..., "tool_calls": [{"name", "arguments"}], "usage": {...}}
/// or a bare string. "messages" is accepted as an alias for "agent".
class ScriptedStub final : public ChatClient {
 public:
  enum class OnExhausted { repeat_last, cycle, error };

  ScriptedStub() = default;
  ScriptedStub(ScriptedStub&& o) noexcept
      : queues_(std::move(o.queues_)),
        requests_(std::move(o.requests_)),
        on_exhausted_(o.on_exhausted_),
        call_counter_(o.call_counter_) {}

  static ScriptedStub from_json(const json& j) {
    ScriptedStub s;
    auto mode = j.value("on_exhausted", "error");
    if (mode == "repeat_last") {
      s.on_exhausted_ = OnExhausted::repeat_last;
    } else if (mode == "cycle") {
      s.on_exhausted_ = OnExhausted::cycle;
    } else if (mode == "error") {
      s.on_exhausted_ = OnExhausted::error;
    } else {
      throw std::invalid_argument("on_exhausted must be repeat_last, cycle or error");
    }
    for (auto ch : {Channel::route, Channel::agent, Channel::self_check, Channel::properties, Channel::tags}) {
      std::string key(to_string(ch));
      if (ch == Channel::agent && !j.contains(key) && j.contains("messages")) key = "messages";
      if (!j.contains(key)) continue;
      for (const auto& r : j[key]) s.push(ch, reply_from_json(r));
    }
    return s;
  }

  static ScriptedStub from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open stub fixture " + path);
    return from_json(json::parse(in));
  }

  void push(Channel ch, Message reply) {
    std::lock_guard lock(mutex_);
    reply.role = Role::assistant;
    queues_[ch].replies.push_back(std::move(reply));
  }

  void set_on_exhausted(OnExhausted mode) { on_exhausted_ = mode; }

  Message complete(const ChatRequest& request) override {
    std::lock_guard lock(mutex_);
    auto& q = queues_[request.channel];
    requests_.push_back(request);
    if (q.replies.empty())
      throw LLMUnavailable("scripted stub has no '" + std::string(to_string(request.channel)) + "' replies");
    std::size_t idx = q.next;
    if (idx >= q.replies.size()) {
      switch (on_exhausted_) {
        case OnExhausted::repeat_last: idx = q.replies.size() - 1; break;
        case OnExhausted::cycle: idx = idx % q.replies.size(); break;
        case OnExhausted::error:
          throw LLMUnavailable("scripted stub exhausted its '" + std::string(to_string(request.channel)) + "' replies");
      }
    }
    ++q.next;
    Message m = q.replies[idx];
    for (std::size_t i = 0; i < m.tool_calls.size(); ++i)
      if (m.tool_calls[i].id.empty()) m.tool_calls[i].id = "call_" + std::to_string(++call_counter_);
    if (!m.usage) {
      // Synthetic counts keep token reports well-formed.
      long prompt = static_cast<long>(request.system.size() / 4);
      for (const auto& msg : request.messages) prompt += static_cast<long>(msg.content.size() / 4);
      m.usage = TokenUsage{prompt, static_cast<long>(m.content.size() / 4) + 1};
    }
    return m;
  }

  std::size_t calls(Channel ch) const {
    std::lock_guard lock(mutex_);
    auto it = queues_.find(ch);
    return it == queues_.end() ? 0 : it->second.next;
  }

  std::vector<ChatRequest> requests() const {
    std::lock_guard lock(mutex_);
    return requests_;
  }

 private:
  struct Queue {
    std::vector<Message> replies;
    std::size_t next = 0;
  };

  static Message reply_from_json(const json& r) {
    if (r.is_string()) return Message{Role::assistant, r.get<std::string>(), {}, {}, {}, {}};
    Message m;
    m.role = Role::assistant;
    m.content = r.value("content", "");
    if (r.contains("tool_calls"))
      for (const auto& c : r["tool_calls"])
        m.tool_calls.push_back({c.value("id", ""), c.at("name").get<std::string>(), c.value("arguments", json::object())});
    if (r.contains("usage")) m.usage = TokenUsage{r["usage"].value("prompt", 0L), r["usage"].value("completion", 0L)};
    return m;
  }

  mutable std::mutex mutex_;
  std::map<Channel, Queue> queues_;
  std::vector<ChatRequest> requests_;
  OnExhausted on_exhausted_ = OnExhausted::error;
  long call_counter_ = 0;
};

struct HttpConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key;
  int timeout_seconds = 120;
  int retries = 2;

  /// AUTOLABS_LLM_BASE_URL / AUTOLABS_LLM_API_KEY, falling back on OPENAI_API_KEY.
  static HttpConfig from_env() {
    HttpConfig c;
    if (const char* u = std::getenv("AUTOLABS_LLM_BASE_URL")) c.base_url = u;
    if (const char* k = std::getenv("AUTOLABS_LLM_API_KEY")) {
      c.api_key = k;
    } else if (const char* k2 = std::getenv("OPENAI_API_KEY")) {
      c.api_key = k2;
    }
    return c;
  }
};

/// Chat-completions wire format.
inline json wire_request(const ChatRequest& r) {
  json messages = json::array();
  if (!r.system.empty()) messages.push_back({{"role", "system"}, {"content", r.system}});
  for (const auto& m : r.messages) {
    json w{{"role", std::string(to_string(m.role))}, {"content", m.content}};
    if (!m.tool_calls.empty()) {
      json calls = json::array();
      for (const auto& c : m.tool_calls)
        calls.push_back({{"id", c.id}, {"type", "function"}, {"function", {{"name", c.name}, {"arguments", c.arguments.dump()}}}});
      w["tool_calls"] = calls;
    }
    if (m.tool_call_id) w["tool_call_id"] = *m.tool_call_id;
    messages.push_back(std::move(w));
  }
  json body{{"model", r.model}, {"messages", messages}};
  if (r.reasoning_effort) body["reasoning_effort"] = *r.reasoning_effort;
  if (!r.tools.empty()) {
    json tools = json::array();
    for (const auto& t : r.tools)
      tools.push_back({{"type", "function"},
                       {"function", {{"name", t.name}, {"description", t.description}, {"parameters", t.parameters}}}});
    body["tools"] = tools;
  }
  return body;
}

inline Message parse_wire_response(const json& body) {
  if (!body.contains("choices") || body["choices"].empty()) throw LLMUnavailable("response has no choices");
  const auto& msg = body["choices"][0].at("message");
  Message m;
  m.role = Role::assistant;
  if (msg.contains("content") && msg["content"].is_string()) m.content = msg["content"].get<std::string>();
  if (msg.contains("tool_calls") && msg["tool_calls"].is_array()) {
    for (const auto& c : msg["tool_calls"]) {
      ToolCall call;
      call.id = c.value("id", "");
      call.name = c.at("function").at("name").get<std::string>();
      auto args = c["function"].value("arguments", "{}");
      call.arguments = json::parse(args, nullptr, false);
      if (call.arguments.is_discarded()) call.arguments = json{{"_raw", args}};
      m.tool_calls.push_back(std::move(call));
    }
  }
  if (body.contains("usage"))
    m.usage = TokenUsage{body["usage"].value("prompt_tokens", 0L), body["usage"].value("completion_tokens", 0L)};
  return m;
}

class HttpChatClient final : public ChatClient {
 public:
  explicit HttpChatClient(HttpConfig config) : config_(std::move(config)) {
    auto scheme_end = config_.base_url.find("://");
    if (scheme_end == std::string::npos) throw std::invalid_argument("base URL needs a scheme: " + config_.base_url);
    auto path_start = config_.base_url.find('/', scheme_end + 3);
    origin_ = config_.base_url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "" : config_.base_url.substr(path_start);
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
  }

  Message complete(const ChatRequest& request) override {
    auto body = wire_request(request).dump();
    std::string last_error;
    for (int attempt = 0; attempt <= config_.retries; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(200 * attempt));
      httplib::Client cli(origin_);
      cli.set_connection_timeout(10);
      cli.set_read_timeout(config_.timeout_seconds);
      httplib::Headers headers;
      if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
      auto res = cli.Post(path_ + "/chat/completions", headers, body, "application/json");
      if (!res) {
        last_error = "request failed: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500 || res->status == 429) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) throw LLMUnavailable("HTTP " + std::to_string(res->status) + ": " + res->body);
      auto parsed = json::parse(res->body, nullptr, false);
      if (parsed.is_discarded()) throw LLMUnavailable("response is not JSON");
      return parse_wire_response(parsed);
    }
    throw LLMUnavailable(last_error);
  }

 private:
  HttpConfig config_;
  std::string origin_;
  std::string path_;
};

}  // namespace autolabs::llm
