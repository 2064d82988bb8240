#pragma once

// Chemical properties resolved by a chat model, for names the bundled table
// does not know.

#include <string>
#include <string_view>

#include <json.hpp>

#include "autolabs/chem.hpp"
#include "autolabs/llm.hpp"

namespace autolabs {

/// Asks the model for {"molecular_weight", "density", "physical_state",
/// "weight_percent"?} as a JSON object. Wrap in CachingProvider so a session
/// sees one answer per name.
class LlmPropertyProvider final : public PropertyProvider {
 public:
  LlmPropertyProvider(llm::ChatClient& client, std::string model) : client_(client), model_(std::move(model)) {}

  static constexpr std::string_view kInstruction =
      "Return the physical properties of the named chemical as a single JSON object with keys "
      "\"molecular_weight\" (g/mol), \"density\" (g/mL at room temperature), \"physical_state\" "
      "(\"solid\" or \"liquid\") and, for solutions given as a percentage, \"weight_percent\". "
      "Reply with the JSON object only. If the name is not a chemical reply with {\"unknown\": true}.";

  ChemicalProperties lookup(std::string_view name) const override {
    llm::ChatRequest req;
    req.channel = llm::Channel::properties;
    req.model = model_;
    req.system = std::string(kInstruction);
    req.messages.push_back({llm::Role::user, std::string(name), {}, {}, {}, {}});
    llm::Message reply;
    try {
      reply = client_.complete(req);
    } catch (const llm::LLMUnavailable&) {
      throw UnknownChemical(std::string(name));
    }
    auto text = std::string(detail::trim(reply.content));
    auto open = text.find('{');
    auto close = text.rfind('}');
    if (open == std::string::npos || close == std::string::npos || close < open) throw UnknownChemical(std::string(name));
    auto j = nlohmann::json::parse(text.substr(open, close - open + 1), nullptr, false);
    if (j.is_discarded() || !j.is_object() || j.value("unknown", false)) throw UnknownChemical(std::string(name));
    if (!j.contains("molecular_weight") || !j["molecular_weight"].is_number() || !j.contains("density") ||
        !j["density"].is_number())
      throw UnknownChemical(std::string(name));
    ChemicalProperties p;
    p.name = detail::canonical_name(name);
    p.molecular_weight = j["molecular_weight"].get<double>();
    p.density = j["density"].get<double>();
    p.physical_state = j.value("physical_state", "liquid") == "solid" ? PhysicalState::solid : PhysicalState::liquid;
    if (j.contains("weight_percent") && j["weight_percent"].is_number()) p.weight_percent = j["weight_percent"].get<double>();
    return p;
  }

 private:
  llm::ChatClient& client_;
  std::string model_;
};

/// Tries `primary`, then `fallback` for names the primary does not know.
class FallbackProvider final : public PropertyProvider {
 public:
  FallbackProvider(const PropertyProvider& primary, const PropertyProvider& fallback)
      : primary_(primary), fallback_(fallback) {}

  ChemicalProperties lookup(std::string_view name) const override {
    try {
      return primary_.lookup(name);
    } catch (const UnknownChemical&) {
      return fallback_.lookup(name);
    }
  }

 private:
  const PropertyProvider& primary_;
  const PropertyProvider& fallback_;
};

}  // namespace autolabs
