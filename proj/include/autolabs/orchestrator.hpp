#pragma once

// Supervisor/sub-agent session loop: routing, tool dispatch, final-steps
// detection, self-checks and path/token accounting.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "autolabs/chem.hpp"
#include "autolabs/detail/text.hpp"
#include "autolabs/fixtures.hpp"
#include "autolabs/llm.hpp"
#include "autolabs/protocol.hpp"
#include "autolabs/self_checks.hpp"
#include "autolabs/tags.hpp"

namespace autolabs::orch {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Agents

enum class AgentId { Supervisor, UnderstandRefine, ChemicalCalculations, VialArrangement, ProcessingSteps, FinalSteps, SelfChecks };

inline constexpr AgentId kSubAgents[] = {AgentId::UnderstandRefine, AgentId::ChemicalCalculations,
                                         AgentId::VialArrangement, AgentId::ProcessingSteps, AgentId::FinalSteps};
inline constexpr AgentId kAllAgents[] = {AgentId::Supervisor,      AgentId::UnderstandRefine, AgentId::ChemicalCalculations,
                                         AgentId::VialArrangement, AgentId::ProcessingSteps,  AgentId::FinalSteps,
                                         AgentId::SelfChecks};

inline constexpr std::string_view kRespondToUser = "respond_to_user";

inline std::string_view to_string(AgentId a) {
  switch (a) {
    case AgentId::Supervisor: return "Supervisor";
    case AgentId::UnderstandRefine: return "Understand_And_Refine";
    case AgentId::ChemicalCalculations: return "Chemical_Calculations";
    case AgentId::VialArrangement: return "Vial_Arrangement";
    case AgentId::ProcessingSteps: return "Processing_Steps";
    case AgentId::FinalSteps: return "Final_Steps";
    case AgentId::SelfChecks: return "SelfChecks";
  }
  return "";
}

/// Path-diagram label.
inline std::string_view short_label(AgentId a) {
  switch (a) {
    case AgentId::Supervisor: return "S";
    case AgentId::UnderstandRefine: return "U";
    case AgentId::ChemicalCalculations: return "C";
    case AgentId::VialArrangement: return "V";
    case AgentId::ProcessingSteps: return "P";
    case AgentId::FinalSteps: return "F";
    case AgentId::SelfChecks: return "SC";
  }
  return "";
}

namespace detail {

inline std::string route_key(std::string_view s) {
  std::string out;
  for (char c : s)
    if (std::isalnum(static_cast<unsigned char>(c))) out.push_back(autolabs::detail::lower(c));
  return out;
}

}  // namespace detail

/// Accepts the canonical ids, the enum spellings and the role-table names.
inline std::optional<AgentId> parse_agent_id(std::string_view s) {
  static const std::map<std::string, AgentId> names = [] {
    std::map<std::string, AgentId> m;
    for (auto a : kAllAgents) m[detail::route_key(to_string(a))] = a;
    m[detail::route_key("UnderstandRefine")] = AgentId::UnderstandRefine;
    m[detail::route_key("Understand_And_Refine_Experiment")] = AgentId::UnderstandRefine;
    m[detail::route_key("Undesrand_And_Refine_Experiment")] = AgentId::UnderstandRefine;
    m[detail::route_key("ChemicalCalculations")] = AgentId::ChemicalCalculations;
    m[detail::route_key("Calculate_Chemical_Amounts_For_Reactions")] = AgentId::ChemicalCalculations;
    m[detail::route_key("Determine_Vial_Organization")] = AgentId::VialArrangement;
    m[detail::route_key("Determine_Processing_Steps")] = AgentId::ProcessingSteps;
    m[detail::route_key("Generate_Final_Steps")] = AgentId::FinalSteps;
    m[detail::route_key("Self_Checks")] = AgentId::SelfChecks;
    return m;
  }();
  auto it = names.find(detail::route_key(s));
  if (it == names.end()) return std::nullopt;
  return it->second;
}

inline std::string_view role_instruction(AgentId a) {
  switch (a) {
    case AgentId::Supervisor:
      return "Manage the conversation with the user and produce the experiment steps.";
    case AgentId::UnderstandRefine:
      return "Refine and correct experimental steps according to user instructions. Confirm with the user the agent's "
             "understanding of the experiment and source chemicals.";
    case AgentId::ChemicalCalculations: return "For each reaction or mixture, perform calculations.";
    case AgentId::VialArrangement: return "Determine the vial organization and assign reactions to specific vials.";
    case AgentId::ProcessingSteps: return "Determine additional processing steps.";
    case AgentId::FinalSteps: return "Gather, organize and generate final steps using <final-steps> tags.";
    case AgentId::SelfChecks: return "Review the final steps against the requirements.";
  }
  return "";
}

// ---------------------------------------------------------------------------
// Configurations

enum class Topology { SingleAgent, MultiAgent };
enum class Cognition { NR, PR, FR };
enum class SelfCheckMode { None, Guided, Unguided };

inline std::string_view to_string(Cognition c) { return c == Cognition::NR ? "NR" : c == Cognition::PR ? "PR" : "FR"; }

inline std::optional<Cognition> parse_cognition(std::string_view s) {
  s = autolabs::detail::trim(s);
  if (autolabs::detail::iequals(s, "NR")) return Cognition::NR;
  if (autolabs::detail::iequals(s, "PR")) return Cognition::PR;
  if (autolabs::detail::iequals(s, "FR")) return Cognition::FR;
  return std::nullopt;
}

class InvalidConfig : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ArchitectureConfig {
  Topology topology = Topology::MultiAgent;
  Cognition cognition = Cognition::NR;
  bool tools_enabled = false;
  SelfCheckMode self_check = SelfCheckMode::None;

  bool operator==(const ArchitectureConfig&) const = default;

  /// "MA-TU-GSC"
  std::string name() const {
    std::string out = topology == Topology::SingleAgent ? "SA" : "MA";
    if (tools_enabled) out += "-TU";
    if (self_check == SelfCheckMode::Guided) out += "-GSC";
    if (self_check == SelfCheckMode::Unguided) out += "-UGSC";
    return out;
  }

  /// "MA-TU-GSC/FR"
  std::string label() const { return name() + "/" + std::string(to_string(cognition)); }

  /// Only members of the evaluated grid are constructible.
  static ArchitectureConfig make(Topology t, Cognition c, bool tools, SelfCheckMode sc) {
    if (t == Topology::SingleAgent && c == Cognition::PR)
      throw InvalidConfig("PR assigns the reasoning model to Understand_And_Refine and needs the multi-agent topology");
    if (sc != SelfCheckMode::None && !tools) throw InvalidConfig("self-check variants are evaluated with tools enabled");
    return {t, c, tools, sc};
  }

  static ArchitectureConfig parse(std::string_view config, Cognition c) {
    auto parts = autolabs::detail::split(autolabs::detail::trim(config), '-');
    if (parts.empty()) throw InvalidConfig("empty configuration");
    Topology t;
    auto head = autolabs::detail::trim(parts[0]);
    if (autolabs::detail::iequals(head, "SA")) {
      t = Topology::SingleAgent;
    } else if (autolabs::detail::iequals(head, "MA")) {
      t = Topology::MultiAgent;
    } else {
      throw InvalidConfig("configuration must start with SA or MA: '" + std::string(config) + "'");
    }
    bool tools = false;
    SelfCheckMode sc = SelfCheckMode::None;
    for (std::size_t i = 1; i < parts.size(); ++i) {
      auto p = autolabs::detail::trim(parts[i]);
      if (autolabs::detail::iequals(p, "TU") && !tools && sc == SelfCheckMode::None) {
        tools = true;
      } else if (autolabs::detail::iequals(p, "GSC") && sc == SelfCheckMode::None) {
        sc = SelfCheckMode::Guided;
      } else if (autolabs::detail::iequals(p, "UGSC") && sc == SelfCheckMode::None) {
        sc = SelfCheckMode::Unguided;
      } else {
        throw InvalidConfig("unexpected component '" + std::string(p) + "' in '" + std::string(config) + "'");
      }
    }
    return make(t, c, tools, sc);
  }
};

/// The 20 evaluated configurations: {SA, MA} x {base, TU, TU-GSC, TU-UGSC} x
/// cognition, with PR only for MA.
inline std::vector<ArchitectureConfig> all_configurations() {
  std::vector<ArchitectureConfig> out;
  const std::pair<bool, SelfCheckMode> variants[] = {{false, SelfCheckMode::None},
                                                     {true, SelfCheckMode::None},
                                                     {true, SelfCheckMode::Guided},
                                                     {true, SelfCheckMode::Unguided}};
  for (auto t : {Topology::SingleAgent, Topology::MultiAgent})
    for (auto c : {Cognition::NR, Cognition::PR, Cognition::FR}) {
      if (t == Topology::SingleAgent && c == Cognition::PR) continue;
      for (auto [tools, sc] : variants) out.push_back(ArchitectureConfig::make(t, c, tools, sc));
    }
  return out;
}

struct AgentModel {
  std::string model;
  std::optional<std::string> reasoning_effort;
  bool operator==(const AgentModel&) const = default;
};

/// Model names are configuration; see AppConfig.
struct ModelNames {
  std::string non_reasoning;
  std::string reasoning;
  std::optional<std::string> reasoning_effort;
};

struct ModelAssignment {
  std::map<AgentId, AgentModel> models;

  bool operator==(const ModelAssignment&) const = default;

  const AgentModel& for_agent(AgentId a) const {
    static const AgentModel none;
    auto it = models.find(a);
    return it == models.end() ? none : it->second;
  }

  static ModelAssignment for_cognition(Cognition c, const ModelNames& names) {
    AgentModel plain{names.non_reasoning, std::nullopt};
    AgentModel reasoning{names.reasoning, names.reasoning_effort};
    ModelAssignment m;
    for (auto a : kAllAgents) {
      bool uses_reasoning = c == Cognition::FR || (c == Cognition::PR && a == AgentId::UnderstandRefine);
      m.models[a] = uses_reasoning ? reasoning : plain;
    }
    return m;
  }
};

// ---------------------------------------------------------------------------
// Prompts

inline std::filesystem::path data_dir() {
  if (const char* env = std::getenv("AUTOLABS_DATA_DIR")) return env;
  return AUTOLABS_DATA_DIR;
}

/// Shared multi-agent system prompt.
inline const std::string& system_prompt() {
  static const std::string text = autolabs::detail::read_file(data_dir() / "system_prompt.txt");
  return text;
}

/// The shared prompt without the agent-roles table.
inline std::string single_agent_prompt(std::string_view prompt) {
  auto start = prompt.find("The role of each agent is listed below.");
  if (start == std::string_view::npos) return std::string(prompt);
  auto pos = prompt.find('\n', start);
  pos = pos == std::string_view::npos ? prompt.size() : pos + 1;
  while (pos < prompt.size()) {
    auto end = prompt.find('\n', pos);
    auto line = autolabs::detail::trim(prompt.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos));
    if (line.empty() || line.front() != '|') break;
    pos = end == std::string_view::npos ? prompt.size() : end + 1;
  }
  while (pos < prompt.size() && prompt[pos] == '\n') ++pos;
  return std::string(prompt.substr(0, start)) + std::string(prompt.substr(pos));
}

inline std::string routing_instruction() {
  std::string ids;
  for (auto a : kSubAgents) ids += std::string(to_string(a)) + ", ";
  return "Decide which agent acts next. Reply with exactly one of: " + ids + std::string(kRespondToUser) +
         ". Reply with the name only.";
}

inline std::string agent_system_prompt(const std::string& shared, AgentId a) {
  return shared + "\nYou are the " + std::string(to_string(a)) + " agent. Your role: " +
         std::string(role_instruction(a)) + "\n";
}

// ---------------------------------------------------------------------------
// Tools

inline const std::vector<llm::ToolSchema>& tool_registry() {
  static const std::vector<llm::ToolSchema> tools{
      {"get_chem_volume",
       "Volume in uL of a given mass of a chemical: mass (mg) divided by density (g/mL).",
       {{"type", "object"},
        {"properties",
         {{"chemical_name", {{"type", "string"}, {"description", "chemical name"}}},
          {"mass_mg", {{"type", "number"}, {"description", "mass in mg"}}}}},
        {"required", json::array({"chemical_name", "mass_mg"})}}},
      {"find_the_volume_corresponding_to_moles",
       "Volume in uL of a liquid chemical holding the given amount of substance: moles x molecular weight / density.",
       {{"type", "object"},
        {"properties",
         {{"chemical_name", {{"type", "string"}, {"description", "chemical name"}}},
          {"moles", {{"type", "number"}, {"description", "amount in mol"}}}}},
        {"required", json::array({"chemical_name", "moles"})}}},
      {"find_the_concentration_of_n_percent_solution",
       "Molarity (mol/L) of an n% solution such as '28% ammonia'.",
       {{"type", "object"},
        {"properties", {{"solution_name", {{"type", "string"}, {"description", "percent solution name, e.g. 28% ammonia"}}}}},
        {"required", json::array({"solution_name"})}}},
      {"find_chemical_amounts_in_a_solution",
       "Amounts of two chemicals in a solution of given total molarity and molar ratio R = [chemical_2]/[chemical_1]: "
       "M1 = T/(R+1), M2 = R*T/(R+1). Liquids are reported in uL, solids in mg.",
       {{"type", "object"},
        {"properties",
         {{"total_molarity", {{"type", "number"}, {"description", "total molarity in mol/L"}}},
          {"molar_ratio", {{"type", "number"}, {"description", "molar ratio R of chemical_2 to chemical_1"}}},
          {"chemical_1", {{"type", "string"}, {"description", "first chemical name"}}},
          {"chemical_2", {{"type", "string"}, {"description", "second chemical name"}}},
          {"volume_L", {{"type", "number"}, {"description", "solution volume in L"}}}}},
        {"required", json::array({"total_molarity", "molar_ratio", "chemical_1", "chemical_2", "volume_L"})}}},
  };
  return tools;
}

namespace detail {

inline double number_arg(const json& args, const char* key) {
  if (!args.contains(key)) throw std::invalid_argument(std::string("missing argument '") + key + "'");
  const auto& v = args[key];
  if (v.is_number()) return v.get<double>();
  if (v.is_string())
    if (auto d = autolabs::detail::parse_decimal(v.get<std::string>())) return *d;
  throw std::invalid_argument(std::string("argument '") + key + "' must be a number");
}

inline std::string string_arg(const json& args, const char* key) {
  if (!args.contains(key) || !args[key].is_string())
    throw std::invalid_argument(std::string("argument '") + key + "' must be a string");
  return args[key].get<std::string>();
}

inline double round_to(double v, int places) {
  double f = std::pow(10.0, places);
  return std::round(v * f) / f;
}

inline json component_json(const ComponentAmount& c) {
  auto amount = c.canonical();
  return {{"name", c.name},
          {"physical_state", std::string(to_string(c.physical_state))},
          {"molarity_M", round_to(c.molarity.value, 6)},
          {"moles", round_to(c.moles.value, 9)},
          {"mass_mg", round_to(c.mass.value, 4)},
          {"volume_uL", round_to(c.volume.value, 4)},
          {"amount", round_to(amount.value, 2)},
          {"unit", std::string(to_string(amount.unit))}};
}

}  // namespace detail

/// Runs one tool call. Never throws; failures come back as {"error": ...}.
inline json dispatch(const llm::ToolCall& call, const PropertyProvider& props) {
  try {
    const auto& a = call.arguments;
    if (call.name == "get_chem_volume") {
      auto v = get_chem_volume(props, detail::string_arg(a, "chemical_name"), Milligrams{detail::number_arg(a, "mass_mg")});
      return {{"volume_uL", detail::round_to(v.value, 4)}};
    }
    if (call.name == "find_the_volume_corresponding_to_moles") {
      auto v = find_the_volume_corresponding_to_moles(props, detail::string_arg(a, "chemical_name"),
                                                      Moles{detail::number_arg(a, "moles")});
      return {{"volume_uL", detail::round_to(v.value, 4)}};
    }
    if (call.name == "find_the_concentration_of_n_percent_solution") {
      auto m = find_the_concentration_of_n_percent_solution(props, detail::string_arg(a, "solution_name"));
      return {{"molarity_M", detail::round_to(m.value, 4)}};
    }
    if (call.name == "find_chemical_amounts_in_a_solution") {
      SolutionSpec spec{Molar{detail::number_arg(a, "total_molarity")}, detail::number_arg(a, "molar_ratio"),
                        Liters{detail::number_arg(a, "volume_L")}};
      auto [c1, c2] = find_chemical_amounts_in_a_solution(props, spec, detail::string_arg(a, "chemical_1"),
                                                          detail::string_arg(a, "chemical_2"));
      return {{"chemical_1", detail::component_json(c1)}, {"chemical_2", detail::component_json(c2)}};
    }
    return {{"error", "unknown tool '" + call.name + "'"}};
  } catch (const UnknownChemical& e) {
    return {{"error", std::string("unknown chemical: ") + e.what()}};
  } catch (const std::exception& e) {
    return {{"error", e.what()}};
  }
}

// ---------------------------------------------------------------------------
// Sessions

enum class Mode { FullyAutomated, HumanInLoop };
enum class Status { active, awaiting_user, awaiting_tags, self_checking, done, failed };

inline std::string_view to_string(Mode m) { return m == Mode::FullyAutomated ? "auto" : "interactive"; }

inline std::string_view to_string(Status s) {
  switch (s) {
    case Status::active: return "active";
    case Status::awaiting_user: return "awaiting_user";
    case Status::awaiting_tags: return "awaiting_tags";
    case Status::self_checking: return "self_checking";
    case Status::done: return "done";
    case Status::failed: return "failed";
  }
  return "";
}

/// Coarse lifecycle phase; a session never moves to a lower phase.
inline int phase(Status s) {
  switch (s) {
    case Status::active:
    case Status::awaiting_user: return 0;
    case Status::self_checking: return 1;
    case Status::awaiting_tags: return 2;
    case Status::done:
    case Status::failed: return 3;
  }
  return 0;
}

inline constexpr std::string_view kCannedReply = "Please use your best judgment and proceed";
inline constexpr int kDefaultTurnLimit = 40;
inline constexpr std::string_view kTurnLimitExceeded = "TurnLimitExceeded";

struct TokenTotals {
  long prompt = 0;
  long completion = 0;
  long total() const { return prompt + completion; }
  bool operator==(const TokenTotals&) const = default;
  void add(const std::optional<llm::TokenUsage>& u) {
    if (!u) return;
    prompt += u->prompt;
    completion += u->completion;
  }
};

struct SessionState {
  std::string description;
  ArchitectureConfig config;
  ModelAssignment models;
  Mode mode = Mode::FullyAutomated;
  std::vector<llm::Message> transcript;  // system prompt, user and agent turns
  std::vector<llm::Message> review;      // unguided self-check exchange
  std::vector<AgentId> path;
  std::optional<Procedure> finalized;
  std::optional<StepTags> tags;
  json self_check = nullptr;  // SelfCheckOutcome report once run
  Status status = Status::active;
  TokenTotals tokens;
  int turns = 0;
  std::optional<std::string> failure;

  bool operator==(const SessionState&) const = default;
};

struct SessionOptions {
  int turn_limit = kDefaultTurnLimit;
  int unguided_limit = checks::kUnguidedLimit;
  int max_tool_rounds = 8;
  double solvent_tolerance = 0.01;
  const PropertyProvider* props = nullptr;  // bundled table when null
  std::vector<PlateBinding> plates;         // explicit vial sizes; inferred otherwise
  std::optional<std::string> system_prompt;  // shared prompt override
};

namespace detail {

inline const PropertyProvider& props_of(const SessionOptions& o) { return o.props ? *o.props : StaticTable::bundled(); }

inline std::string shared_prompt(const SessionState& s, const SessionOptions& o) {
  const std::string& base = o.system_prompt ? *o.system_prompt : system_prompt();
  return s.config.topology == Topology::SingleAgent ? single_agent_prompt(base) : base;
}

/// Conversation without the leading system message.
inline std::vector<llm::Message> conversation(const SessionState& s) {
  std::vector<llm::Message> out;
  for (const auto& m : s.transcript)
    if (m.role != llm::Role::system) out.push_back(m);
  return out;
}

inline llm::Message user_message(std::string text) { return {llm::Role::user, std::move(text), {}, {}, {}, {}}; }

}  // namespace detail

/// Smallest standard array holding every addressed vial with the largest
/// per-vial liquid volume inside the 80% working limit.
inline constexpr double kMaxWorkingFraction = 0.8;

inline ArraySpec infer_array(const Procedure& p, PlateId plate) {
  std::map<VialIndex, double> fill;
  std::set<VialIndex> vials;
  for (const auto& s : p.steps) {
    if (const auto* add = std::get_if<AddStep>(&s)) {
      if (add->plate != plate) continue;
      for (const auto& [v, x] : add->values) {
        vials.insert(v);
        if (add->unit == Unit::uL) fill[v] += x;
      }
    } else if (const auto* set = std::get_if<SetStep>(&s)) {
      if (set->plate != plate) continue;
      for (const auto& [v, _] : set->values) vials.insert(v);
    } else if (const auto* t = std::get_if<TransferStep>(&s)) {
      for (const auto& [src, target] : t->mapping) {
        if (t->source == plate) vials.insert(src);
        if (t->destination == plate) {
          vials.insert(target.destination);
          if (target.amount.unit == Unit::uL && !t->has(TransferFlag::MoveVial)) fill[target.destination] += target.amount.value;
        }
      }
    }
  }
  double max_fill_mL = 0;
  for (const auto& [_, uL] : fill) max_fill_mL = std::max(max_fill_mL, uL / 1000.0);
  for (const auto& spec : vial_catalog()) {
    if (spec.vial_volume_mL * kMaxWorkingFraction + 1e-9 < max_fill_mL) continue;
    if (std::all_of(vials.begin(), vials.end(), [&](VialIndex v) { return spec.contains(v); })) return spec;
  }
  return vial_catalog().back();
}

inline Procedure bind_arrays(Procedure p, const std::vector<PlateBinding>& plates) {
  p = bind_plates(std::move(p), plates);
  for (auto plate : p.plates())
    if (!p.arrays.count(plate)) p.arrays[plate] = infer_array(p, plate);
  return p;
}

inline SessionState new_session(std::string description, ArchitectureConfig config, ModelAssignment models, Mode mode,
                                const SessionOptions& options = {}) {
  SessionState s;
  s.description = std::move(description);
  s.config = config;
  s.models = std::move(models);
  s.mode = mode;
  s.transcript.push_back({llm::Role::system, detail::shared_prompt(s, options), {}, {}, {}, {}});
  s.transcript.push_back(detail::user_message(s.description));
  return s;
}

/// Appends the chosen agent to the path; nullopt means the supervisor answers
/// the user directly.
inline std::optional<AgentId> route(SessionState& s, llm::ChatClient& client, const SessionOptions& options = {}) {
  if (s.status != Status::active) throw std::logic_error("route requires an active session");
  if (s.config.topology == Topology::SingleAgent) {
    s.path.push_back(AgentId::Supervisor);
    return AgentId::Supervisor;
  }
  llm::ChatRequest req;
  req.channel = llm::Channel::route;
  const auto& m = s.models.for_agent(AgentId::Supervisor);
  req.model = m.model;
  req.reasoning_effort = m.reasoning_effort;
  req.system = detail::shared_prompt(s, options) + "\n" + routing_instruction() + "\n";
  req.messages = detail::conversation(s);
  for (int attempt = 0; attempt < 2; ++attempt) {
    auto reply = client.complete(req);
    s.tokens.add(reply.usage);
    auto answer = autolabs::detail::trim(reply.content);
    if (detail::route_key(answer) == detail::route_key(kRespondToUser)) return std::nullopt;
    auto id = parse_agent_id(answer);
    if (id && *id != AgentId::Supervisor && *id != AgentId::SelfChecks) {
      s.path.push_back(*id);
      return id;
    }
    req.messages.push_back({llm::Role::assistant, reply.content, std::string("Supervisor"), {}, {}, {}});
    req.messages.push_back(detail::user_message("'" + std::string(answer) + "' is not an agent. " + routing_instruction()));
  }
  return std::nullopt;
}

inline bool tools_allowed(const SessionState& s, AgentId a) {
  if (!s.config.tools_enabled) return false;
  return s.config.topology == Topology::SingleAgent ? a == AgentId::Supervisor : a == AgentId::ChemicalCalculations;
}

/// One agent activation. Tool calls are dispatched and their results appended
/// before the agent's final message; the final message is returned.
inline llm::Message run_agent(AgentId id, SessionState& s, llm::ChatClient& client, const SessionOptions& options = {}) {
  const auto& m = s.models.for_agent(id);
  bool allowed = tools_allowed(s, id);
  auto agent_name = std::string(to_string(id));
  bool refused_once = false;
  for (int round = 0;; ++round) {
    llm::ChatRequest req;
    req.channel = llm::Channel::agent;
    req.model = m.model;
    req.reasoning_effort = m.reasoning_effort;
    req.system = id == AgentId::Supervisor && s.config.topology == Topology::SingleAgent
                     ? detail::shared_prompt(s, options)
                     : agent_system_prompt(detail::shared_prompt(s, options), id);
    req.messages = detail::conversation(s);
    if (allowed) req.tools = tool_registry();
    auto reply = client.complete(req);
    s.tokens.add(reply.usage);
    reply.role = llm::Role::assistant;
    reply.agent = agent_name;
    if (reply.tool_calls.empty()) {
      s.transcript.push_back(reply);
      return reply;
    }
    bool out_of_rounds = round >= options.max_tool_rounds;
    s.transcript.push_back(reply);
    for (const auto& call : reply.tool_calls) {
      json result;
      if (!allowed) {
        result = {{"error", "tool use is not available to " + agent_name + "; answer without calling tools"}};
      } else if (out_of_rounds) {
        result = {{"error", "tool-call limit reached; answer with the results so far"}};
      } else {
        result = dispatch(call, detail::props_of(options));
      }
      s.transcript.push_back({llm::Role::tool, result.dump(), agent_name, {}, call.id, {}});
    }
    if (!allowed) {
      if (refused_once) return reply;
      refused_once = true;
    } else if (out_of_rounds) {
      return reply;
    }
  }
}

inline llm::Message run_subagent(AgentId id, SessionState& s, llm::ChatClient& client, const SessionOptions& options = {}) {
  if (id == AgentId::Supervisor) throw std::invalid_argument("run_subagent takes a sub-agent");
  return run_agent(id, s, client, options);
}

namespace detail {

/// Latest final-steps block among messages appended since `from`.
inline std::optional<Procedure> final_steps_since(const SessionState& s, std::size_t from) {
  for (std::size_t i = s.transcript.size(); i-- > from;) {
    const auto& m = s.transcript[i];
    if (m.role != llm::Role::assistant) continue;
    try {
      if (auto p = extract_final_steps(m.content)) return p;
    } catch (const std::exception&) {
    }
  }
  return std::nullopt;
}

inline void finalize(SessionState& s, Procedure proc, llm::ChatClient& client, const SessionOptions& options) {
  const auto& props = props_of(options);
  proc = bind_arrays(std::move(proc), options.plates);
  s.status = Status::self_checking;
  std::optional<StepTags> tags;
  if (s.config.self_check == SelfCheckMode::Guided) {
    s.path.push_back(AgentId::SelfChecks);
    checks::CheckContext ctx;
    ctx.props = &props;
    ctx.solvent_tolerance = options.solvent_tolerance;
    for (const auto& b : options.plates)
      if (b.target_volume_uL) ctx.target_volume_uL[b.plate] = *b.target_volume_uL;
    ctx.tags = default_tags(proc, props);
    auto outcome = checks::run_guided(proc, ctx);
    s.self_check = checks::to_json(outcome);
    proc = outcome.revised;
    tags = outcome.tags;
  } else if (s.config.self_check == SelfCheckMode::Unguided) {
    s.path.push_back(AgentId::SelfChecks);
    const auto& m = s.models.for_agent(AgentId::SelfChecks);
    std::vector<llm::Message> exchange;
    auto outcome = checks::run_unguided(proc, conversation(s), shared_prompt(s, options), client,
                                        {m.model, m.reasoning_effort, options.unguided_limit}, &exchange);
    for (const auto& msg : exchange) s.tokens.add(msg.usage);
    s.review.insert(s.review.end(), exchange.begin(), exchange.end());
    s.self_check = checks::to_json(outcome);
    proc = bind_arrays(std::move(outcome.revised), options.plates);
  }
  if (!tags) tags = default_tags(proc, props);
  s.finalized = std::move(proc);
  s.tags = std::move(tags);
  s.status = s.mode == Mode::FullyAutomated ? Status::done : Status::awaiting_tags;
}

}  // namespace detail

/// One routing + agent turn. `user_input` answers an awaiting_user session.
inline SessionState step_session(SessionState s, llm::ChatClient& client, const SessionOptions& options = {},
                                 std::optional<std::string> user_input = std::nullopt) {
  if (s.status == Status::awaiting_user) {
    if (!user_input) return s;
    s.transcript.push_back(detail::user_message(std::move(*user_input)));
    s.status = Status::active;
  } else if (user_input) {
    if (s.status != Status::active) throw std::logic_error("session is not accepting messages");
    s.transcript.push_back(detail::user_message(std::move(*user_input)));
  }
  if (s.status != Status::active) return s;
  if (s.turns >= options.turn_limit) {
    s.status = Status::failed;
    s.failure = std::string(kTurnLimitExceeded) + ": no final steps after " + std::to_string(s.turns) + " turns";
    return s;
  }
  ++s.turns;
  auto from = s.transcript.size();
  try {
    auto next = route(s, client, options);
    run_agent(next.value_or(AgentId::Supervisor), s, client, options);
    if (auto proc = detail::final_steps_since(s, from)) {
      detail::finalize(s, std::move(*proc), client, options);
    } else if (s.mode == Mode::FullyAutomated) {
      s.transcript.push_back(detail::user_message(std::string(kCannedReply)));
    } else {
      s.status = Status::awaiting_user;
    }
  } catch (const llm::LLMUnavailable& e) {
    s.status = Status::failed;
    s.failure = std::string("LLMUnavailable: ") + e.what();
  }
  return s;
}

/// Steps until the session leaves the active state.
inline SessionState advance(SessionState s, llm::ChatClient& client, const SessionOptions& options = {},
                            std::optional<std::string> user_input = std::nullopt) {
  s = step_session(std::move(s), client, options, std::move(user_input));
  while (s.status == Status::active) s = step_session(std::move(s), client, options);
  return s;
}

inline SessionState run_session(const std::string& description, const ArchitectureConfig& config, Mode mode,
                                llm::ChatClient& client, const ModelAssignment& models,
                                const SessionOptions& options = {}) {
  return advance(new_session(description, config, models, mode, options), client, options);
}

/// Accepts the user's tag selection for an awaiting_tags session.
inline SessionState submit_tags(SessionState s, const StepTags& tags, const PropertyProvider& props) {
  if (s.status != Status::awaiting_tags || !s.finalized) throw std::logic_error("session is not awaiting tags");
  require_valid_tags(*s.finalized, tags, props);
  s.tags = tags;
  s.status = Status::done;
  return s;
}

// ---------------------------------------------------------------------------
// Reports

struct PathReport {
  std::size_t length = 0;
  std::map<AgentId, int> visits;
  TokenTotals tokens;
  int runs = 0;

  PathReport& operator+=(const PathReport& o) {
    length += o.length;
    for (const auto& [a, n] : o.visits) visits[a] += n;
    tokens.prompt += o.tokens.prompt;
    tokens.completion += o.tokens.completion;
    runs += o.runs;
    return *this;
  }
};

inline PathReport path_and_token_report(const SessionState& s) {
  if (s.status != Status::done && s.status != Status::failed)
    throw std::logic_error("path report needs a finished session");
  PathReport r;
  r.length = s.path.size();
  for (auto a : s.path) ++r.visits[a];
  r.tokens = s.tokens;
  r.runs = 1;
  return r;
}

inline std::string path_string(const std::vector<AgentId>& path) {
  std::string out;
  for (auto a : path) {
    if (!out.empty()) out += "-";
    out += std::string(short_label(a));
  }
  return out;
}

inline json to_json(const PathReport& r) {
  json visits = json::object();
  for (const auto& [a, n] : r.visits) visits[std::string(to_string(a))] = n;
  return {{"runs", r.runs},
          {"path_length", r.length},
          {"visits", visits},
          {"prompt_tokens", r.tokens.prompt},
          {"completion_tokens", r.tokens.completion},
          {"total_tokens", r.tokens.total()}};
}

// ---------------------------------------------------------------------------
// Serialization

inline json to_json(const ArchitectureConfig& c) {
  return {{"name", c.name()}, {"cognition", std::string(to_string(c.cognition))}};
}

inline ArchitectureConfig config_from_json(const json& j) {
  auto c = parse_cognition(j.at("cognition").get<std::string>());
  if (!c) throw InvalidConfig("unknown cognition level");
  return ArchitectureConfig::parse(j.at("name").get<std::string>(), *c);
}

inline json to_json(const ModelAssignment& m) {
  json j = json::object();
  for (const auto& [a, am] : m.models) {
    json e{{"model", am.model}};
    if (am.reasoning_effort) e["reasoning_effort"] = *am.reasoning_effort;
    j[std::string(to_string(a))] = e;
  }
  return j;
}

inline ModelAssignment models_from_json(const json& j) {
  ModelAssignment m;
  for (const auto& [k, v] : j.items()) {
    auto a = parse_agent_id(k);
    if (!a) throw std::invalid_argument("unknown agent '" + k + "'");
    AgentModel am{v.value("model", ""), std::nullopt};
    if (v.contains("reasoning_effort")) am.reasoning_effort = v["reasoning_effort"].get<std::string>();
    m.models[*a] = am;
  }
  return m;
}

inline Status parse_status(std::string_view s) {
  for (auto st : {Status::active, Status::awaiting_user, Status::awaiting_tags, Status::self_checking, Status::done,
                  Status::failed})
    if (to_string(st) == s) return st;
  throw std::invalid_argument("unknown status '" + std::string(s) + "'");
}

inline json messages_json(const std::vector<llm::Message>& ms) {
  json a = json::array();
  for (const auto& m : ms) a.push_back(llm::to_json(m));
  return a;
}

inline std::vector<llm::Message> messages_from_json(const json& j) {
  std::vector<llm::Message> out;
  for (const auto& m : j) out.push_back(llm::message_from_json(m));
  return out;
}

/// Procedures carry their array bindings as vial volumes.
inline json procedure_json(const Procedure& p) {
  json arrays = json::object();
  for (const auto& [plate, spec] : p.arrays) arrays[plate.str()] = spec.vial_volume_mL;
  return {{"steps", render_procedure(p)}, {"vial_volumes_mL", arrays}};
}

inline Procedure procedure_from_json(const json& j) {
  auto p = extract_final_steps(j.at("steps").get<std::string>());
  if (!p) throw std::invalid_argument("procedure has no final-steps block");
  auto arrays = j.value("vial_volumes_mL", json::object());
  for (const auto& [label, vol] : arrays.items())
    p->arrays[autolabs::detail::parse_plate_label(label)] = array_for_vial_volume(vol.get<double>());
  return *p;
}

inline json to_json(const SessionState& s) {
  json path = json::array();
  for (auto a : s.path) path.push_back(std::string(to_string(a)));
  json j{{"description", s.description},
         {"config", to_json(s.config)},
         {"models", to_json(s.models)},
         {"mode", std::string(to_string(s.mode))},
         {"status", std::string(to_string(s.status))},
         {"turns", s.turns},
         {"path", path},
         {"tokens", {{"prompt", s.tokens.prompt}, {"completion", s.tokens.completion}}},
         {"transcript", messages_json(s.transcript)},
         {"review", messages_json(s.review)},
         {"self_check", s.self_check}};
  j["finalized"] = s.finalized ? procedure_json(*s.finalized) : json(nullptr);
  j["tags"] = s.tags ? autolabs::to_json(*s.tags) : json(nullptr);
  j["failure"] = s.failure ? json(*s.failure) : json(nullptr);
  return j;
}

inline SessionState session_from_json(const json& j) {
  SessionState s;
  s.description = j.at("description").get<std::string>();
  s.config = config_from_json(j.at("config"));
  s.models = models_from_json(j.at("models"));
  s.mode = j.at("mode").get<std::string>() == "auto" ? Mode::FullyAutomated : Mode::HumanInLoop;
  s.status = parse_status(j.at("status").get<std::string>());
  s.turns = j.at("turns").get<int>();
  for (const auto& a : j.at("path")) {
    auto id = parse_agent_id(a.get<std::string>());
    if (!id) throw std::invalid_argument("unknown agent in path");
    s.path.push_back(*id);
  }
  s.tokens = {j.at("tokens").at("prompt").get<long>(), j.at("tokens").at("completion").get<long>()};
  s.transcript = messages_from_json(j.at("transcript"));
  s.review = messages_from_json(j.at("review"));
  s.self_check = j.at("self_check");
  if (!j.at("finalized").is_null()) s.finalized = procedure_from_json(j["finalized"]);
  if (!j.at("tags").is_null()) s.tags = step_tags_from_json(j["tags"]);
  if (!j.at("failure").is_null()) s.failure = j["failure"].get<std::string>();
  return s;
}

}  // namespace autolabs::orch
