#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "autolabs/llm.hpp"
#include "autolabs/llm_properties.hpp"

using namespace autolabs;
using namespace autolabs::llm;

namespace {

ChatRequest request(Channel ch, std::string text = "hi") {
  ChatRequest r;
  r.channel = ch;
  r.model = "m";
  r.system = "sys";
  r.messages.push_back({Role::user, std::move(text), {}, {}, {}, {}});
  return r;
}

/// Local chat-completions endpoint answering with a fixed body after
/// `failures` 503 responses.
class MockServer {
 public:
  MockServer(std::string reply, int failures = 0) : reply_(std::move(reply)), failures_(failures) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      last_body_ = req.body;
      last_auth_ = req.get_header_value("Authorization");
      if (hits_++ < failures_) {
        res.status = 503;
        return;
      }
      res.set_content(reply_, "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockServer() {
    server_.stop();
    thread_.join();
  }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  int hits() const { return hits_; }
  std::string last_body_, last_auth_;

 private:
  httplib::Server server_;
  std::string reply_;
  int failures_;
  std::atomic<int> hits_{0};
  int port_ = 0;
  std::thread thread_;
};

const char* kWireReply = R"({
  "choices": [{"message": {"role": "assistant", "content": "ok",
    "tool_calls": [{"id": "c1", "type": "function",
      "function": {"name": "get_chem_volume", "arguments": "{\"chemical_name\": \"naphthalene\", \"mass_mg\": 5}"}}]}}],
  "usage": {"prompt_tokens": 12, "completion_tokens": 3}
})";

}  // namespace

TEST(ScriptedStub, RepliesPerChannelInOrder) {
  auto stub = ScriptedStub::from_json(json::parse(R"({"route": ["a", "b"], "agent": ["x"]})"));
  EXPECT_EQ(stub.complete(request(Channel::route)).content, "a");
  EXPECT_EQ(stub.complete(request(Channel::agent)).content, "x");
  EXPECT_EQ(stub.complete(request(Channel::route)).content, "b");
  EXPECT_EQ(stub.calls(Channel::route), 2u);
  EXPECT_THROW(stub.complete(request(Channel::route)), LLMUnavailable);
  EXPECT_THROW(stub.complete(request(Channel::tags)), LLMUnavailable);
}

TEST(ScriptedStub, ExhaustionModes) {
  auto repeat = ScriptedStub::from_json(json::parse(R"({"agent": ["a", "b"], "on_exhausted": "repeat_last"})"));
  std::string seq;
  for (int i = 0; i < 4; ++i) seq += repeat.complete(request(Channel::agent)).content;
  EXPECT_EQ(seq, "abbb");
  auto cycle = ScriptedStub::from_json(json::parse(R"({"agent": ["a", "b"], "on_exhausted": "cycle"})"));
  seq.clear();
  for (int i = 0; i < 5; ++i) seq += cycle.complete(request(Channel::agent)).content;
  EXPECT_EQ(seq, "ababa");
  EXPECT_THROW(ScriptedStub::from_json(json::parse(R"({"on_exhausted": "loop"})")), std::invalid_argument);
}

TEST(ScriptedStub, ToolCallIdsAndSyntheticUsage) {
  auto stub = ScriptedStub::from_json(json::parse(
      R"({"messages": [{"content": "", "tool_calls": [{"name": "t", "arguments": {"a": 1}}, {"name": "u"}]},
                        {"content": "done", "usage": {"prompt": 7, "completion": 2}}]})"));
  auto m = stub.complete(request(Channel::agent, std::string(40, 'x')));
  ASSERT_EQ(m.tool_calls.size(), 2u);
  EXPECT_EQ(m.tool_calls[0].id, "call_1");
  EXPECT_EQ(m.tool_calls[1].id, "call_2");
  EXPECT_EQ(m.tool_calls[0].arguments["a"], 1);
  ASSERT_TRUE(m.usage);
  EXPECT_EQ(m.usage->prompt, 10);
  EXPECT_EQ(m.usage->completion, 1);
  auto second = stub.complete(request(Channel::agent));
  EXPECT_EQ(second.usage, (TokenUsage{7, 2}));
  EXPECT_EQ(stub.requests().size(), 2u);
}

TEST(ScriptedStub, FreshInstancesReplayIdentically) {
  auto j = json::parse(R"({"agent": [{"content": "", "tool_calls": [{"name": "t"}]}, "x"]})");
  auto a = ScriptedStub::from_json(j);
  auto b = ScriptedStub::from_json(j);
  for (int i = 0; i < 2; ++i) EXPECT_EQ(a.complete(request(Channel::agent)), b.complete(request(Channel::agent)));
}

TEST(Message, JsonRoundTrip) {
  Message m{Role::assistant, "text", std::string("Final_Steps"), {{"c1", "t", {{"x", 2}}}}, std::nullopt, TokenUsage{3, 4}};
  EXPECT_EQ(message_from_json(to_json(m)), m);
  Message t{Role::tool, "{}", std::nullopt, {}, std::string("c1"), std::nullopt};
  EXPECT_EQ(message_from_json(to_json(t)), t);
  EXPECT_THROW(parse_role("robot"), std::invalid_argument);
}

TEST(WireFormat, RequestCarriesSystemToolsAndToolMessages) {
  ChatRequest r = request(Channel::agent);
  r.reasoning_effort = "medium";
  r.messages.push_back({Role::assistant, "", {}, {{"c1", "f", {{"k", 1}}}}, {}, {}});
  r.messages.push_back({Role::tool, "{\"v\":1}", {}, {}, std::string("c1"), {}});
  r.tools.push_back({"f", "desc", {{"type", "object"}}});
  auto w = wire_request(r);
  EXPECT_EQ(w["model"], "m");
  EXPECT_EQ(w["reasoning_effort"], "medium");
  ASSERT_EQ(w["messages"].size(), 4u);
  EXPECT_EQ(w["messages"][0]["role"], "system");
  EXPECT_EQ(w["messages"][2]["tool_calls"][0]["function"]["arguments"], "{\"k\":1}");
  EXPECT_EQ(w["messages"][3]["tool_call_id"], "c1");
  EXPECT_EQ(w["tools"][0]["function"]["name"], "f");
}

TEST(WireFormat, ResponseParsing) {
  auto m = parse_wire_response(json::parse(kWireReply));
  EXPECT_EQ(m.content, "ok");
  ASSERT_EQ(m.tool_calls.size(), 1u);
  EXPECT_EQ(m.tool_calls[0].arguments["mass_mg"], 5);
  EXPECT_EQ(m.usage, (TokenUsage{12, 3}));
  EXPECT_THROW(parse_wire_response(json::parse(R"({"choices": []})")), LLMUnavailable);
  auto raw = parse_wire_response(json::parse(
      R"({"choices": [{"message": {"content": null, "tool_calls": [{"id": "x", "function": {"name": "f", "arguments": "not json"}}]}}]})"));
  EXPECT_EQ(raw.tool_calls[0].arguments["_raw"], "not json");
}

TEST(HttpChatClient, PostsToLocalEndpoint) {
  MockServer server(kWireReply);
  HttpConfig cfg;
  cfg.base_url = server.base_url();
  cfg.api_key = "secret";
  HttpChatClient client(cfg);
  auto m = client.complete(request(Channel::agent));
  EXPECT_EQ(m.content, "ok");
  EXPECT_EQ(server.last_auth_, "Bearer secret");
  EXPECT_EQ(json::parse(server.last_body_)["messages"][1]["content"], "hi");
}

TEST(HttpChatClient, RetriesServerErrors) {
  MockServer server(kWireReply, 2);
  HttpConfig cfg;
  cfg.base_url = server.base_url();
  cfg.retries = 2;
  HttpChatClient client(cfg);
  EXPECT_EQ(client.complete(request(Channel::agent)).content, "ok");
  EXPECT_EQ(server.hits(), 3);
}

TEST(HttpChatClient, GivesUpAfterRetries) {
  MockServer server(kWireReply, 10);
  HttpConfig cfg;
  cfg.base_url = server.base_url();
  cfg.retries = 1;
  HttpChatClient client(cfg);
  EXPECT_THROW(client.complete(request(Channel::agent)), LLMUnavailable);
  EXPECT_EQ(server.hits(), 2);
}

TEST(HttpChatClient, UnreachableHostIsUnavailable) {
  HttpConfig cfg;
  cfg.base_url = "http://127.0.0.1:1/v1";
  cfg.retries = 0;
  HttpChatClient client(cfg);
  EXPECT_THROW(client.complete(request(Channel::agent)), LLMUnavailable);
  EXPECT_THROW(HttpChatClient(HttpConfig{"no-scheme", "", 1, 0}), std::invalid_argument);
}

TEST(LlmPropertyProvider, ParsesJsonReplyAndFallsBack) {
  ScriptedStub stub;
  stub.push(Channel::properties, {Role::assistant,
                                  "```json\n{\"molecular_weight\": 78.11, \"density\": 0.8765, \"physical_state\": \"liquid\"}\n```",
                                  {}, {}, {}, {}});
  stub.push(Channel::properties, {Role::assistant, "{\"unknown\": true}", {}, {}, {}, {}});
  LlmPropertyProvider llm_props(stub, "m");
  StaticTable table;
  table.add({"water", 18.015, 0.997, PhysicalState::liquid, std::nullopt});
  FallbackProvider chain(table, llm_props);
  CachingProvider cached(chain);
  EXPECT_DOUBLE_EQ(cached.lookup("water").density, 0.997);
  EXPECT_DOUBLE_EQ(cached.lookup("Benzene").molecular_weight, 78.11);
  EXPECT_DOUBLE_EQ(cached.lookup("benzene").density, 0.8765);
  EXPECT_EQ(stub.calls(Channel::properties), 1u);
  EXPECT_THROW(cached.lookup("unobtainium"), UnknownChemical);
  EXPECT_NEAR(get_chem_volume(cached, "benzene", Milligrams{8.765}).value, 10.0, 1e-12);
}
