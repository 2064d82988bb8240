#pragma once

// Hardware tag vocabulary attached to steps before emission, default
// suggestions and the validity rules shared by the UI, self-checks and emitter.

#include <algorithm>
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
#include "autolabs/protocol.hpp"

namespace autolabs {

enum class CoreTag { Powder, SyringePump, PDT };
enum class TipSize { Tip10mL, Tip1000uL };
enum class OptionalTag {
  Plate,
  Notify,
  Backsolvent,
  ExtSingleTip,
  FourTip,
  LookAhead,
  SourceTracking,
  DestinationTracking,
  Hover,
  StartVialTimer,
  WaitVialTimer,
};

inline constexpr CoreTag kAllCoreTags[] = {CoreTag::Powder, CoreTag::SyringePump, CoreTag::PDT};
inline constexpr TipSize kAllTipSizes[] = {TipSize::Tip10mL, TipSize::Tip1000uL};
inline constexpr OptionalTag kAllOptionalTags[] = {
    OptionalTag::Plate,          OptionalTag::Notify,         OptionalTag::Backsolvent,
    OptionalTag::ExtSingleTip,   OptionalTag::FourTip,        OptionalTag::LookAhead,
    OptionalTag::SourceTracking, OptionalTag::DestinationTracking, OptionalTag::Hover,
    OptionalTag::StartVialTimer, OptionalTag::WaitVialTimer,
};

inline std::string_view to_string(CoreTag t) {
  switch (t) {
    case CoreTag::Powder: return "Powder";
    case CoreTag::SyringePump: return "SyringePump";
    case CoreTag::PDT: return "PDT";
  }
  return "";
}

inline std::string_view to_string(TipSize t) { return t == TipSize::Tip10mL ? "10mLTip" : "1000uLTip"; }

inline std::string_view to_string(OptionalTag t) {
  switch (t) {
    case OptionalTag::Plate: return "Plate";
    case OptionalTag::Notify: return "Notify";
    case OptionalTag::Backsolvent: return "Backsolvent";
    case OptionalTag::ExtSingleTip: return "ExtSingleTip";
    case OptionalTag::FourTip: return "4Tip";
    case OptionalTag::LookAhead: return "LookAhead";
    case OptionalTag::SourceTracking: return "SourceTracking";
    case OptionalTag::DestinationTracking: return "DestinationTracking";
    case OptionalTag::Hover: return "Hover";
    case OptionalTag::StartVialTimer: return "StartVialTimer";
    case OptionalTag::WaitVialTimer: return "WaitVialTimer";
  }
  return "";
}

class InvalidTagSet : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <class E, std::size_t N>
std::optional<E> parse_tag_name(std::string_view s, const E (&all)[N]) {
  for (auto e : all)
    if (detail::iequals(detail::trim(s), to_string(e))) return e;
  return std::nullopt;
}

struct TagSet {
  std::optional<CoreTag> core;
  std::optional<TipSize> tip_size;
  std::set<OptionalTag> optional_tags;

  bool has(OptionalTag t) const { return optional_tags.count(t) != 0; }
  bool operator==(const TagSet&) const = default;
};

using StepTags = std::map<std::size_t, TagSet>;  // step index -> tags

inline nlohmann::json to_json(const TagSet& t) {
  nlohmann::json j = nlohmann::json::object();
  j["core"] = t.core ? nlohmann::json(std::string(to_string(*t.core))) : nlohmann::json(nullptr);
  j["tip_size"] = t.tip_size ? nlohmann::json(std::string(to_string(*t.tip_size))) : nlohmann::json(nullptr);
  auto opts = nlohmann::json::array();
  for (auto o : t.optional_tags) opts.push_back(std::string(to_string(o)));
  j["optional"] = opts;
  return j;
}

inline TagSet tagset_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidTagSet("tag set must be a JSON object");
  TagSet t;
  if (j.contains("core") && !j["core"].is_null()) {
    auto c = parse_tag_name(j["core"].get<std::string>(), kAllCoreTags);
    if (!c) throw InvalidTagSet("unknown core tag '" + j["core"].get<std::string>() + "'");
    t.core = c;
  }
  if (j.contains("tip_size") && !j["tip_size"].is_null()) {
    auto s = parse_tag_name(j["tip_size"].get<std::string>(), kAllTipSizes);
    if (!s) throw InvalidTagSet("unknown tip size '" + j["tip_size"].get<std::string>() + "'");
    t.tip_size = s;
  }
  if (j.contains("optional")) {
    for (const auto& o : j["optional"]) {
      auto tag = parse_tag_name(o.get<std::string>(), kAllOptionalTags);
      if (!tag) throw InvalidTagSet("unknown optional tag '" + o.get<std::string>() + "'");
      t.optional_tags.insert(*tag);
    }
  }
  return t;
}

/// Tags file: `{"0": {...}, "3": {...}}`.
inline StepTags step_tags_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidTagSet("tags file must map step indices to tag sets");
  StepTags out;
  for (const auto& [key, value] : j.items()) {
    auto idx = detail::parse_decimal(key);
    if (!idx || *idx < 0 || *idx != static_cast<double>(static_cast<std::size_t>(*idx)))
      throw InvalidTagSet("bad step index '" + key + "'");
    out[static_cast<std::size_t>(*idx)] = tagset_from_json(value);
  }
  return out;
}

inline nlohmann::json to_json(const StepTags& tags) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [i, t] : tags) j[std::to_string(i)] = to_json(t);
  return j;
}

inline bool is_aqueous(std::string_view chemical) {
  auto n = detail::canonical_name(chemical);
  if (n == "water" || n.find("aqueous") != std::string::npos || n.rfind("aq ", 0) == 0) return true;
  return n.find("(aq)") != std::string::npos || n.find(" in water") != std::string::npos;
}

/// Liquids the syringe pump handles: water and water-miscible liquids.
inline bool is_water_miscible(std::string_view chemical) {
  if (is_aqueous(chemical)) return true;
  static const std::set<std::string> miscible{
      "methanol",   "ethanol",    "propanol",        "1-propanol",  "2-propanol", "isopropanol",
      "glycerol",   "acetic acid", "propanoic acid", "formic acid", "sulfuric acid",
      "ammonia",    "acetone",    "acetonitrile",    "dmso",        "dimethyl sulfoxide",
      "dmf",        "dimethylformamide", "ethylene glycol", "tetrahydrofuran", "thf", "hydrochloric acid",
  };
  auto n = detail::canonical_name(chemical);
  if (auto pct = parse_percent_name(n)) n = detail::canonical_name(pct->solvent.empty() ? pct->solute : pct->solvent);
  return miscible.count(n) != 0;
}

inline constexpr double kSmallTipLimit_uL = 1000;

inline TipSize tip_for_volume(double max_uL) {
  return max_uL <= kSmallTipLimit_uL ? TipSize::Tip1000uL : TipSize::Tip10mL;
}

/// Deterministic defaults. Unknown chemicals fall back on the authored unit.
inline TagSet default_tags(const Step& step, const PropertyProvider& props) {
  TagSet t;
  if (const auto* add = std::get_if<AddStep>(&step)) {
    bool solid = add->unit == Unit::mg;
    try {
      solid = props.lookup(add->chemical).physical_state == PhysicalState::solid;
    } catch (const UnknownChemical&) {
    }
    if (solid) {
      t.core = CoreTag::Powder;
    } else if (is_water_miscible(add->chemical)) {
      t.core = CoreTag::SyringePump;
    } else {
      double max_uL = 0;
      for (const auto& [_, v] : add->values) max_uL = std::max(max_uL, v);
      t.core = CoreTag::PDT;
      t.tip_size = tip_for_volume(max_uL);
    }
  } else if (const auto* tr = std::get_if<TransferStep>(&step)) {
    if (tr->has(TransferFlag::StartVialTimer)) t.optional_tags.insert(OptionalTag::StartVialTimer);
    if (tr->has(TransferFlag::WaitVialTimer)) t.optional_tags.insert(OptionalTag::WaitVialTimer);
  }
  return t;
}

inline StepTags default_tags(const Procedure& p, const PropertyProvider& props) {
  StepTags out;
  for (std::size_t i = 0; i < p.steps.size(); ++i) out[i] = default_tags(p.steps[i], props);
  return out;
}

/// Rule violations for one step's tags; empty means valid.
inline std::vector<std::string> tag_problems(const Step& step, const TagSet& t, const PropertyProvider& props) {
  std::vector<std::string> out;
  const auto* add = std::get_if<AddStep>(&step);
  if (!add) {
    if (t.core) out.push_back("core tag " + std::string(to_string(*t.core)) + " is only valid on Add steps");
    if (t.tip_size) out.push_back("tip size is only valid with PDT");
  } else {
    std::optional<bool> solid;
    try {
      solid = props.lookup(add->chemical).physical_state == PhysicalState::solid;
    } catch (const UnknownChemical&) {
      solid = add->unit == Unit::mg;
    }
    if (!t.core) {
      out.push_back("Add " + add->chemical + " needs a core tag");
    } else if (*t.core == CoreTag::Powder && !*solid) {
      out.push_back("Powder is for solids; " + add->chemical + " is a liquid");
    } else if (*t.core != CoreTag::Powder && *solid) {
      out.push_back(std::string(to_string(*t.core)) + " is for liquids; " + add->chemical + " is a solid");
    }
    bool pdt = t.core == CoreTag::PDT;
    if (pdt && !t.tip_size) out.push_back("PDT requires a tip size");
    if (!pdt && t.tip_size) out.push_back("tip size is only valid with PDT");
  }
  const auto* tr = std::get_if<TransferStep>(&step);
  for (auto timer : {OptionalTag::StartVialTimer, OptionalTag::WaitVialTimer})
    if (t.has(timer) && !tr) out.push_back(std::string(to_string(timer)) + " is only valid on transfers");
  return out;
}

inline void require_valid_tags(const Procedure& p, const StepTags& tags, const PropertyProvider& props) {
  for (const auto& [i, _] : tags)
    if (i >= p.steps.size()) throw InvalidTagSet("tags reference step " + std::to_string(i) + " which does not exist");
  for (std::size_t i = 0; i < p.steps.size(); ++i) {
    auto it = tags.find(i);
    TagSet empty;
    auto problems = tag_problems(p.steps[i], it == tags.end() ? empty : it->second, props);
    if (!problems.empty()) throw InvalidTagSet("step " + std::to_string(i + 1) + ": " + problems.front());
  }
}

/// Vocabulary and rules for clients rendering a tag editor.
inline nlohmann::json tag_rules() {
  using nlohmann::json;
  json core = json::array(), tips = json::array(), opts = json::array();
  for (auto c : kAllCoreTags) core.push_back(std::string(to_string(c)));
  for (auto t : kAllTipSizes) tips.push_back(std::string(to_string(t)));
  for (auto o : kAllOptionalTags) opts.push_back(std::string(to_string(o)));
  return {
      {"core_tags", core},
      {"tip_sizes", tips},
      {"optional_tags", opts},
      {"rules",
       json::array({
           {{"tag", "Powder"}, {"applies_to", "Add"}, {"requires_state", "solid"}},
           {{"tag", "SyringePump"}, {"applies_to", "Add"}, {"requires_state", "liquid"},
            {"recommended_for", "water or water-miscible liquids"}},
           {{"tag", "PDT"}, {"applies_to", "Add"}, {"requires_state", "liquid"}, {"requires", "tip_size"},
            {"recommended_for", "immiscible liquids"}},
           {{"tag", "StartVialTimer"}, {"applies_to", "Transfer"}},
           {{"tag", "WaitVialTimer"}, {"applies_to", "Transfer"}},
       })},
      {"core_required_on", "Add"},
      {"small_tip_limit_uL", kSmallTipLimit_uL},
  };
}

}  // namespace autolabs
