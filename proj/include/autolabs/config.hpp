#pragma once

// Application configuration: a JSON file layered over data/autolabs.json.
// Secrets only ever come from the environment.

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "autolabs/fixtures.hpp"
#include "autolabs/llm.hpp"
#include "autolabs/orchestrator.hpp"

namespace autolabs {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ClientKind { stub, http };

struct AppConfig {
  ClientKind client = ClientKind::stub;
  std::string base_url = "https://api.openai.com/v1";
  orch::ModelNames models;
  int turn_limit = orch::kDefaultTurnLimit;
  int self_check_limit = checks::kUnguidedLimit;
  double solvent_tolerance = 0.01;
  std::filesystem::path fixture_dir;  // empty: fixture_root()
  std::filesystem::path store_dir = "sessions";
  std::string host = "127.0.0.1";
  int port = 8080;

  static std::filesystem::path default_file() { return orch::data_dir() / "autolabs.json"; }

  /// Defaults from data/autolabs.json, then `file` if given, then the
  /// AUTOLABS_LLM_BASE_URL environment override.
  static AppConfig load(const std::optional<std::filesystem::path>& file = std::nullopt) {
    AppConfig c;
    if (std::filesystem::exists(default_file())) c.merge(read(default_file()));
    if (file) c.merge(read(*file));
    if (const char* u = std::getenv("AUTOLABS_LLM_BASE_URL")) c.base_url = u;
    return c;
  }

  static nlohmann::json read(const std::filesystem::path& file) {
    auto j = nlohmann::json::parse(detail::read_file(file), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ConfigError(file.string() + ": not a JSON object");
    reject_secrets(j, file.string());
    return j;
  }

  void merge(const nlohmann::json& j) {
    try {
      for (const auto& [k, v] : j.items()) {
        if (k == "client") {
          auto s = v.get<std::string>();
          if (s == "stub") client = ClientKind::stub;
          else if (s == "http") client = ClientKind::http;
          else throw ConfigError("client must be stub or http, got '" + s + "'");
        } else if (k == "base_url") {
          base_url = v.get<std::string>();
        } else if (k == "models") {
          if (v.contains("non_reasoning")) models.non_reasoning = v["non_reasoning"].get<std::string>();
          if (v.contains("reasoning")) models.reasoning = v["reasoning"].get<std::string>();
          if (v.contains("reasoning_effort"))
            models.reasoning_effort = v["reasoning_effort"].is_null() ? std::nullopt
                                                                      : std::optional(v["reasoning_effort"].get<std::string>());
        } else if (k == "turn_limit") {
          turn_limit = positive(v, k);
        } else if (k == "self_check_limit") {
          self_check_limit = positive(v, k);
        } else if (k == "solvent_tolerance") {
          solvent_tolerance = v.get<double>();
          if (!(solvent_tolerance >= 0)) throw ConfigError("solvent_tolerance must be non-negative");
        } else if (k == "fixture_dir") {
          fixture_dir = v.get<std::string>();
        } else if (k == "store_dir") {
          store_dir = v.get<std::string>();
        } else if (k == "listen") {
          if (v.contains("host")) host = v["host"].get<std::string>();
          if (v.contains("port")) port = v["port"].get<int>();
        } else {
          throw ConfigError("unknown config key '" + k + "'");
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad config value: ") + e.what());
    }
  }

  llm::HttpConfig http() const {
    auto h = llm::HttpConfig::from_env();
    if (!std::getenv("AUTOLABS_LLM_BASE_URL")) h.base_url = base_url;
    return h;
  }

  orch::SessionOptions session_options() const {
    orch::SessionOptions o;
    o.turn_limit = turn_limit;
    o.unguided_limit = self_check_limit;
    o.solvent_tolerance = solvent_tolerance;
    return o;
  }

  /// Experiment id under the configured fixture directory, or a bundle path.
  Fixture fixture(const std::string& id_or_dir) const {
    if (!fixture_dir.empty() && !std::filesystem::is_directory(id_or_dir) &&
        std::filesystem::is_directory(fixture_dir / id_or_dir))
      return load_fixture((fixture_dir / id_or_dir).string());
    return load_fixture(id_or_dir);
  }

 private:
  static int positive(const nlohmann::json& v, const std::string& key) {
    int n = v.get<int>();
    if (n <= 0) throw ConfigError(key + " must be positive");
    return n;
  }

  static void reject_secrets(const nlohmann::json& j, const std::string& where) {
    for (const auto& [k, v] : j.items()) {
      std::string lower;
      for (char ch : k) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      for (auto word : {"key", "secret", "token", "password"})
        if (lower.find(word) != std::string::npos)
          throw ConfigError(where + ": '" + k + "' looks like a secret; set it through the environment");
      if (v.is_object()) reject_secrets(v, where);
    }
  }
};

}  // namespace autolabs
