#pragma once

// Hardware document: chemicals, instrument parameters and tagged steps,
// serialized as deterministic XML (schema/hardware.xsd).

#include <cstdio>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <json.hpp>

#include "autolabs/chem.hpp"
#include "autolabs/llm.hpp"
#include "autolabs/protocol.hpp"
#include "autolabs/tags.hpp"

namespace autolabs::hw {

inline constexpr std::string_view kSchemaVersion = "1";

class ValidationFailed : public std::runtime_error {
 public:
  explicit ValidationFailed(std::vector<std::string> problems)
      : std::runtime_error(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& ps) {
    std::string out = "hardware document invalid";
    for (const auto& p : ps) out += "\n  " + p;
    return out;
  }
  std::vector<std::string> problems_;
};

struct ChemicalEntry {
  std::string name;  // canonical
  double molecular_weight = 0;
  double density = 0;
  PhysicalState state = PhysicalState::liquid;
  std::optional<double> weight_percent;
  bool operator==(const ChemicalEntry&) const = default;
};

struct PlateParameters {
  PlateId plate;
  ArraySpec array;
  bool operator==(const PlateParameters&) const = default;
};

struct Setting {
  std::string name;
  std::string value;
  bool operator==(const Setting&) const = default;
};

struct HardwareDocument {
  std::vector<ChemicalEntry> chemicals;
  std::vector<PlateParameters> plates;
  std::vector<Setting> settings;
  std::vector<Step> steps;
  std::vector<TagSet> tags;  // parallel to steps
};

/// Deduplicated Add-step chemicals in order of first use.
inline std::vector<ChemicalEntry> extract_chemicals(const Procedure& p, const PropertyProvider& props) {
  std::vector<ChemicalEntry> out;
  std::set<std::string> seen;
  for (const auto& s : p.steps) {
    const auto* add = std::get_if<AddStep>(&s);
    if (!add) continue;
    auto name = detail::canonical_name(add->chemical);
    if (!seen.insert(name).second) continue;
    auto c = props.lookup(add->chemical);
    out.push_back({name, c.molecular_weight, c.density, c.physical_state, c.weight_percent});
  }
  return out;
}

/// Deterministic defaults; the model may only add or drop optional tags, and
/// only ones the rules allow on this step.
inline TagSet suggest_tags(const Step& step, const PropertyProvider& props, llm::ChatClient* client = nullptr,
                           const std::string& model = {}) {
  auto tags = default_tags(step, props);
  if (!client) return tags;
  llm::ChatRequest req;
  req.channel = llm::Channel::tags;
  req.model = model;
  std::string allowed;
  for (auto o : kAllOptionalTags) allowed += (allowed.empty() ? "" : ", ") + std::string(to_string(o));
  req.system =
      "Suggest optional hardware tags for one liquid-handler step. Allowed optional tags: " + allowed +
      ". Reply with a JSON object {\"optional\": [...]} listing the optional tags the step should carry.";
  req.messages.push_back({llm::Role::user,
                          "Step: " + render_step(step) + "\nDefault tags: " + to_json(tags).dump(), {}, {}, {}, {}});
  llm::Message reply;
  try {
    reply = client->complete(req);
  } catch (const llm::LLMUnavailable&) {
    return tags;
  }
  auto open = reply.content.find('{');
  auto close = reply.content.rfind('}');
  if (open == std::string::npos || close == std::string::npos || close < open) return tags;
  auto j = nlohmann::json::parse(reply.content.substr(open, close - open + 1), nullptr, false);
  if (j.is_discarded() || !j.contains("optional") || !j["optional"].is_array()) return tags;
  TagSet refined = tags;
  refined.optional_tags.clear();
  for (const auto& o : j["optional"]) {
    if (!o.is_string()) continue;
    auto t = parse_tag_name(o.get<std::string>(), kAllOptionalTags);
    if (!t) continue;
    TagSet trial = refined;
    trial.optional_tags.insert(*t);
    if (tag_problems(step, trial, props).empty()) refined = trial;
  }
  // Timer tags follow the step's flags.
  for (auto timer : {OptionalTag::StartVialTimer, OptionalTag::WaitVialTimer}) {
    if (tags.has(timer)) refined.optional_tags.insert(timer);
  }
  return refined;
}

/// Limits and unit conventions written into the parameters section.
inline std::vector<Setting> instrument_settings() {
  return {
      {"unit.solid", "mg"},
      {"unit.liquid", "uL"},
      {"unit.temperature", "degC"},
      {"unit.delay", "min"},
      {"limit.heating_temp.min", detail::format_number(Limits::kMinHeatingTemp)},
      {"limit.heating_temp.max", detail::format_number(Limits::kMaxHeatingTemp)},
      {"limit.stir_rate.max", detail::format_number(Limits::kMaxStirRate)},
      {"limit.vortex_rate.max", detail::format_number(Limits::kMaxVortexRate)},
  };
}

inline HardwareDocument build_document(const Procedure& p, const StepTags& tags, const PropertyProvider& props) {
  std::vector<std::string> problems;
  for (const auto& v : validate_procedure(p))
    if (v.severity == Severity::Error) problems.push_back("step " + std::to_string(v.step_index + 1) + ": " + v.message);
  if (p.arrays.empty() && !p.steps.empty()) problems.push_back("procedure has no plate bindings");
  if (!problems.empty()) throw ValidationFailed(std::move(problems));
  require_valid_tags(p, tags, props);

  HardwareDocument doc;
  doc.chemicals = extract_chemicals(p, props);
  for (const auto& [plate, spec] : p.arrays) doc.plates.push_back({plate, spec});
  doc.settings = instrument_settings();
  doc.steps = p.steps;
  for (std::size_t i = 0; i < p.steps.size(); ++i) {
    auto it = tags.find(i);
    doc.tags.push_back(it == tags.end() ? TagSet{} : it->second);
  }
  return doc;
}

namespace detail {

inline std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

inline std::string fixed(double v, int places) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", places, v);
  std::string s = buf;
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

inline std::string attr(std::string_view name, std::string_view value) {
  return " " + std::string(name) + "=\"" + escape(value) + "\"";
}

inline std::string flags_of(const TransferStep& t) {
  std::string out;
  for (auto f : t.flags) out += (out.empty() ? "" : " ") + std::string(to_string(f));
  return out;
}

}  // namespace detail

inline constexpr int kAmountPlaces = 2;
inline constexpr int kPropertyPlaces = 4;

inline std::string to_xml(const HardwareDocument& doc) {
  using detail::attr;
  using detail::fixed;
  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<autolabs-hardware" << attr("version", kSchemaVersion) << ">\n";

  out << "  <chemicals>\n";
  for (const auto& c : doc.chemicals) {
    out << "    <chemical" << attr("name", c.name) << attr("molecular-weight", fixed(c.molecular_weight, kPropertyPlaces))
        << attr("density", fixed(c.density, kPropertyPlaces)) << attr("state", to_string(c.state));
    if (c.weight_percent) out << attr("weight-percent", fixed(*c.weight_percent, kPropertyPlaces));
    out << "/>\n";
  }
  out << "  </chemicals>\n";

  out << "  <parameters>\n";
  for (const auto& p : doc.plates)
    out << "    <plate" << attr("name", p.plate.str()) << attr("rows", std::to_string(p.array.rows))
        << attr("columns", std::to_string(p.array.cols))
        << attr("vial-volume-mL", autolabs::detail::format_number(p.array.vial_volume_mL))
        << attr("cappable", p.array.cappable ? "true" : "false") << "/>\n";
  for (const auto& s : doc.settings) out << "    <setting" << attr("name", s.name) << attr("value", s.value) << "/>\n";
  out << "  </parameters>\n";

  out << "  <steps>\n";
  for (std::size_t i = 0; i < doc.steps.size(); ++i) {
    const auto& tags = doc.tags[i];
    out << "    <step" << attr("index", std::to_string(i + 1));
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, AddStep>) {
            out << attr("action", "Add") << attr("plate", s.plate.str())
                << attr("chemical", autolabs::detail::canonical_name(s.chemical)) << attr("unit", to_string(s.unit));
          } else if constexpr (std::is_same_v<T, SetStep>) {
            out << attr("action", "Set") << attr("plate", s.plate.str()) << attr("parameter", to_string(s.parameter));
          } else {
            out << attr("action", "Transfer") << attr("mode", to_string(s.mode)) << attr("source", s.source.str())
                << attr("destination", s.destination.str());
            if (!s.flags.empty()) out << attr("flags", detail::flags_of(s));
          }
        },
        doc.steps[i]);
    if (tags.core) out << attr("core", to_string(*tags.core));
    if (tags.tip_size) out << attr("tip-size", to_string(*tags.tip_size));
    out << ">\n";
    for (auto o : tags.optional_tags) out << "      <tag" << attr("name", to_string(o)) << "/>\n";
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, TransferStep>) {
            for (const auto& [src, target] : s.mapping)
              out << "      <transfer" << attr("from", src.str()) << attr("to", target.destination.str())
                  << attr("amount", fixed(target.amount.value, kAmountPlaces))
                  << attr("unit", to_string(target.amount.unit)) << "/>\n";
          } else {
            for (const auto& [v, x] : s.values)
              out << "      <vial" << attr("id", v.str()) << attr("value", fixed(x, kAmountPlaces)) << "/>\n";
          }
        },
        doc.steps[i]);
    out << "    </step>\n";
  }
  out << "  </steps>\n";
  out << "</autolabs-hardware>\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Schema validation: the rules of schema/hardware.xsd plus referential
// integrity, checked on the serialized bytes.

namespace detail {

using boost::property_tree::ptree;

inline std::optional<std::string> attribute(const ptree& node, const std::string& name) {
  auto attrs = node.get_child_optional("<xmlattr>");
  if (!attrs) return std::nullopt;
  auto v = attrs->get_optional<std::string>(name);
  if (!v) return std::nullopt;
  return *v;
}

inline std::vector<std::pair<std::string, const ptree*>> elements(const ptree& node) {
  std::vector<std::pair<std::string, const ptree*>> out;
  for (const auto& [name, child] : node)
    if (name != "<xmlattr>" && name != "<xmlcomment>") out.emplace_back(name, &child);
  return out;
}

inline bool matches(const std::optional<std::string>& v, const std::regex& re) { return v && std::regex_match(*v, re); }

}  // namespace detail

/// Empty when the document is valid.
inline std::vector<std::string> validate_document(const std::string& xml) {
  using detail::attribute;
  using detail::elements;
  using detail::matches;
  namespace pt = boost::property_tree;
  std::vector<std::string> problems;
  pt::ptree tree;
  try {
    std::istringstream in(xml);
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error& e) {
    return {std::string("not well-formed XML: ") + e.what()};
  }
  if (xml.rfind("<?xml version=\"1.0\" encoding=\"UTF-8\"?>", 0) != 0)
    problems.push_back("missing XML declaration with UTF-8 encoding");
  auto top = elements(tree);
  if (top.size() != 1 || top[0].first != "autolabs-hardware") return {"root element must be autolabs-hardware"};
  const auto& root = *top[0].second;
  if (attribute(root, "version") != std::string(kSchemaVersion)) problems.push_back("unsupported version");

  auto sections = elements(root);
  const char* order[] = {"chemicals", "parameters", "steps"};
  if (sections.size() != 3) {
    problems.push_back("expected exactly three sections");
    return problems;
  }
  for (int i = 0; i < 3; ++i)
    if (sections[i].first != order[i]) problems.push_back(std::string("section ") + std::to_string(i + 1) + " must be " + order[i]);
  if (!problems.empty()) return problems;

  static const std::regex decimal4(R"(\d+\.\d{4})");
  static const std::regex decimal2(R"(-?\d+\.\d{2})");
  static const std::regex positive_int(R"([1-9]\d*)");
  static const std::regex plate_name(R"(Plate [1-9]\d*)");
  static const std::regex vial_id(R"([A-Z]+[1-9]\d*)");
  static const std::regex number(R"(-?\d+(\.\d+)?)");

  std::map<std::string, std::string> chemicals;  // name -> state
  for (const auto& [name, c] : elements(*sections[0].second)) {
    if (name != "chemical") {
      problems.push_back("unexpected element '" + name + "' in chemicals");
      continue;
    }
    auto n = attribute(*c, "name");
    if (!n || n->empty()) problems.push_back("chemical without a name");
    else if (!chemicals.emplace(*n, attribute(*c, "state").value_or("")).second)
      problems.push_back("chemical '" + *n + "' listed more than once");
    for (auto key : {"molecular-weight", "density"})
      if (!matches(attribute(*c, key), decimal4)) problems.push_back(std::string("chemical ") + key + " must have 4 decimals");
    auto st = attribute(*c, "state");
    if (st != std::string("solid") && st != std::string("liquid")) problems.push_back("chemical state must be solid or liquid");
    if (auto wp = attribute(*c, "weight-percent"); wp && !matches(wp, decimal4))
      problems.push_back("weight-percent must have 4 decimals");
  }

  std::set<std::string> plates;
  for (const auto& [name, p] : elements(*sections[1].second)) {
    if (name == "plate") {
      auto n = attribute(*p, "name");
      if (!matches(n, plate_name)) problems.push_back("plate name must look like 'Plate N'");
      else if (!plates.insert(*n).second) problems.push_back(*n + " declared twice");
      if (!matches(attribute(*p, "rows"), positive_int) || !matches(attribute(*p, "columns"), positive_int))
        problems.push_back("plate rows and columns must be positive integers");
      if (!matches(attribute(*p, "vial-volume-mL"), number)) problems.push_back("plate vial volume must be numeric");
      auto cap = attribute(*p, "cappable");
      if (cap != std::string("true") && cap != std::string("false")) problems.push_back("plate cappable must be boolean");
    } else if (name == "setting") {
      if (!attribute(*p, "name") || !attribute(*p, "value")) problems.push_back("setting needs name and value");
    } else {
      problems.push_back("unexpected element '" + name + "' in parameters");
    }
  }

  std::set<std::string> used;
  int expected_index = 1;
  for (const auto& [name, s] : elements(*sections[2].second)) {
    std::string where = "step " + std::to_string(expected_index);
    if (name != "step") {
      problems.push_back("unexpected element '" + name + "' in steps");
      continue;
    }
    if (attribute(*s, "index") != std::to_string(expected_index)) problems.push_back(where + ": index out of sequence");
    ++expected_index;
    auto action = attribute(*s, "action").value_or("");
    auto core = attribute(*s, "core");
    auto tip = attribute(*s, "tip-size");
    auto check_plate = [&](const char* key) {
      auto v = attribute(*s, key);
      if (!v || !plates.count(*v)) problems.push_back(where + ": " + key + " is not a declared plate");
    };
    std::string child_kind;
    if (action == "Add") {
      check_plate("plate");
      auto chem = attribute(*s, "chemical");
      if (!chem || !chemicals.count(*chem)) problems.push_back(where + ": chemical is not in the chemicals section");
      else used.insert(*chem);
      auto unit = attribute(*s, "unit");
      if (unit != std::string("mg") && unit != std::string("uL")) problems.push_back(where + ": unit must be mg or uL");
      if (!core) problems.push_back(where + ": Add steps need a core tag");
      else if (*core != "Powder" && *core != "SyringePump" && *core != "PDT") problems.push_back(where + ": unknown core tag");
      if ((core == std::string("PDT")) != tip.has_value()) problems.push_back(where + ": tip-size present iff core is PDT");
      if (tip && *tip != "10mLTip" && *tip != "1000uLTip") problems.push_back(where + ": unknown tip size");
      if (chem && chemicals.count(*chem) && core) {
        bool solid = chemicals[*chem] == "solid";
        if (solid != (*core == "Powder")) problems.push_back(where + ": core tag does not fit the chemical's state");
      }
      child_kind = "vial";
    } else if (action == "Set") {
      check_plate("plate");
      if (!parse_parameter(attribute(*s, "parameter").value_or(""))) problems.push_back(where + ": unknown parameter");
      if (core || tip) problems.push_back(where + ": core tags only on Add steps");
      child_kind = "vial";
    } else if (action == "Transfer") {
      check_plate("source");
      check_plate("destination");
      auto mode = attribute(*s, "mode");
      if (mode != std::string("Uniform") && mode != std::string("Discrete")) problems.push_back(where + ": bad transfer mode");
      if (core || tip) problems.push_back(where + ": core tags only on Add steps");
      child_kind = "transfer";
    } else {
      problems.push_back(where + ": unknown action '" + action + "'");
      continue;
    }
    int entries = 0;
    for (const auto& [cname, c] : elements(*s)) {
      if (cname == "tag") {
        auto t = attribute(*c, "name");
        if (!t || !parse_tag_name(*t, kAllOptionalTags)) problems.push_back(where + ": unknown optional tag");
        else if ((*t == "StartVialTimer" || *t == "WaitVialTimer") && action != "Transfer")
          problems.push_back(where + ": timer tags only on transfers");
      } else if (cname == child_kind && cname == "vial") {
        ++entries;
        if (!matches(attribute(*c, "id"), vial_id)) problems.push_back(where + ": bad vial id");
        if (!matches(attribute(*c, "value"), decimal2)) problems.push_back(where + ": vial value must have 2 decimals");
      } else if (cname == child_kind && cname == "transfer") {
        ++entries;
        if (!matches(attribute(*c, "from"), vial_id) || !matches(attribute(*c, "to"), vial_id))
          problems.push_back(where + ": bad transfer vial id");
        if (!matches(attribute(*c, "amount"), decimal2)) problems.push_back(where + ": transfer amount must have 2 decimals");
        auto unit = attribute(*c, "unit");
        if (unit != std::string("mg") && unit != std::string("uL")) problems.push_back(where + ": unit must be mg or uL");
      } else {
        problems.push_back(where + ": unexpected element '" + cname + "'");
      }
    }
    if (entries == 0) problems.push_back(where + ": no vial entries");
  }
  for (const auto& [name, _] : chemicals)
    if (!used.count(name)) problems.push_back("chemical '" + name + "' is not used by any step");
  return problems;
}

/// Validates the procedure and tags, builds the document and serializes it.
/// The result always passes validate_document.
inline std::string emit(const Procedure& p, const StepTags& tags, const PropertyProvider& props) {
  auto xml = to_xml(build_document(p, tags, props));
  if (auto problems = validate_document(xml); !problems.empty()) throw ValidationFailed(std::move(problems));
  return xml;
}

}  // namespace autolabs::hw
