#pragma once

// Post-generation review of final steps. Seven rule-based checks run in a fixed
// order and may repair what they find; the unguided mode hands the whole
// procedure back to a model for up to five review rounds.

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "autolabs/chem.hpp"
#include "autolabs/llm.hpp"
#include "autolabs/protocol.hpp"
#include "autolabs/tags.hpp"

namespace autolabs::checks {

// `review` marks findings recorded by the unguided loop.
enum class CheckId { efficiency, units, delays, plates, solvents, transfer, additions, review };

inline constexpr CheckId kGuidedOrder[] = {CheckId::efficiency, CheckId::units,    CheckId::delays,
                                           CheckId::plates,     CheckId::solvents, CheckId::transfer,
                                           CheckId::additions};

inline std::string_view to_string(CheckId c) {
  switch (c) {
    case CheckId::efficiency: return "efficiency";
    case CheckId::units: return "units";
    case CheckId::delays: return "delays";
    case CheckId::plates: return "plates";
    case CheckId::solvents: return "solvents";
    case CheckId::transfer: return "transfer";
    case CheckId::additions: return "additions";
    case CheckId::review: return "review";
  }
  return "";
}

/// Replace steps [first, first + count) with `replacement`.
struct Fix {
  std::size_t first = 0;
  std::size_t count = 0;
  std::vector<Step> replacement;
};

struct CheckFinding {
  CheckId check = CheckId::efficiency;
  Severity severity = Severity::Error;
  std::optional<std::size_t> step_index;
  std::string rule;  // catalog id, e.g. "delays.reset_rate"
  std::string message;
  std::optional<Fix> suggested_fix;
};

inline Procedure apply_fix(Procedure p, const Fix& fix) {
  auto first = p.steps.begin() + static_cast<long>(fix.first);
  p.steps.erase(first, first + static_cast<long>(fix.count));
  p.steps.insert(p.steps.begin() + static_cast<long>(fix.first), fix.replacement.begin(), fix.replacement.end());
  return p;
}

struct CheckContext {
  const PropertyProvider* props = nullptr;  // units/additions degrade to warnings without one
  std::map<PlateId, double> target_volume_uL;
  double solvent_tolerance = 0.01;
  std::optional<StepTags> tags;
  bool auto_fix = true;
  /// Optional model repair for findings no rule can fix; returns a revised procedure or nothing.
  std::function<std::optional<Procedure>(CheckId, const Procedure&, const std::vector<CheckFinding>&)> repair;
};

namespace detail {

inline bool touches(const Step& s, PlateId plate) {
  auto plates = plates_of(s);
  return std::find(plates.begin(), plates.end(), plate) != plates.end();
}

inline bool is_processing(const Step& s) { return !std::holds_alternative<AddStep>(s); }

inline std::optional<PhysicalState> state_of(const AddStep& add, const CheckContext& ctx) {
  if (!ctx.props) return std::nullopt;
  try {
    return ctx.props->lookup(add.chemical).physical_state;
  } catch (const UnknownChemical&) {
    return std::nullopt;
  }
}

inline bool is_solid(const AddStep& add, const CheckContext& ctx) {
  auto s = state_of(add, ctx);
  return s ? *s == PhysicalState::solid : add.unit == Unit::mg;
}

inline CheckFinding finding(CheckId c, Severity s, std::optional<std::size_t> i, std::string rule, std::string msg,
                            std::optional<Fix> fix = std::nullopt) {
  return {c, s, i, std::move(rule), std::move(msg), std::move(fix)};
}

}  // namespace detail

/// The same chemical added to the same plate in several steps with no
/// processing of that plate in between.
inline std::vector<CheckFinding> refine_efficiency(const Procedure& p) {
  std::vector<CheckFinding> out;
  for (std::size_t i = 0; i < p.steps.size(); ++i) {
    const auto* first = std::get_if<AddStep>(&p.steps[i]);
    if (!first) continue;
    auto name = autolabs::detail::canonical_name(first->chemical);
    for (std::size_t j = i + 1; j < p.steps.size(); ++j) {
      const auto& s = p.steps[j];
      if (detail::is_processing(s) && detail::touches(s, first->plate)) break;
      const auto* later = std::get_if<AddStep>(&s);
      if (!later || later->plate != first->plate || autolabs::detail::canonical_name(later->chemical) != name) continue;
      std::optional<Fix> fix;
      if (later->unit == first->unit) {
        AddStep merged = *first;
        for (const auto& [v, x] : later->values) merged.values[v] += x;
        Fix f{i, j - i + 1, {merged}};
        for (std::size_t k = i + 1; k < j; ++k) f.replacement.push_back(p.steps[k]);
        fix = std::move(f);
      }
      out.push_back(detail::finding(CheckId::efficiency, Severity::Error, j, "efficiency.single_addition",
                                    first->chemical + " is added to " + first->plate.str() + " in steps " +
                                        std::to_string(i + 1) + " and " + std::to_string(j + 1) +
                                        "; combine them into one step",
                                    std::move(fix)));
      return out;  // one at a time; indices shift after a merge
    }
  }
  return out;
}

/// Solids in mg, liquids in uL.
inline std::vector<CheckFinding> refine_units(const Procedure& p, const CheckContext& ctx) {
  std::vector<CheckFinding> out;
  for (std::size_t i = 0; i < p.steps.size(); ++i) {
    const auto* add = std::get_if<AddStep>(&p.steps[i]);
    if (!add) continue;
    auto state = detail::state_of(*add, ctx);
    if (!state) {
      out.push_back(detail::finding(CheckId::units, Severity::Warning, i, "units.unknown_chemical",
                                    "cannot tell whether " + add->chemical + " is a solid or a liquid"));
    } else if (*state == PhysicalState::solid && add->unit != Unit::mg) {
      out.push_back(detail::finding(CheckId::units, Severity::Error, i, "units.solid_in_mg",
                                    add->chemical + " is a solid and must be added in mg"));
    } else if (*state == PhysicalState::liquid && add->unit != Unit::uL) {
      out.push_back(detail::finding(CheckId::units, Severity::Error, i, "units.liquid_in_ul",
                                    add->chemical + " is a liquid and must be added in uL"));
    }
  }
  return out;
}

namespace detail {

inline bool is_active_setting(const SetStep& s) {
  for (const auto& [_, v] : s.values) {
    if (s.parameter == ProcessingParameter::HeatingTemp && v > Limits::kMinHeatingTemp) return true;
    if ((s.parameter == ProcessingParameter::StirRate || s.parameter == ProcessingParameter::VortexRate) && v > 0)
      return true;
  }
  return false;
}

inline bool is_delay_for(const Step& s, PlateId plate) {
  if (const auto* set = std::get_if<SetStep>(&s))
    return set->parameter == ProcessingParameter::Delay && set->plate == plate &&
           std::any_of(set->values.begin(), set->values.end(), [](const auto& kv) { return kv.second > 0; });
  if (const auto* t = std::get_if<TransferStep>(&s))
    return t->has(TransferFlag::WaitVialTimer) && (t->source == plate || t->destination == plate);
  return false;
}

}  // namespace detail

/// Heating, stirring and vortexing need a delay before they change or the
/// procedure ends; rates must be brought back to zero.
inline std::vector<CheckFinding> refine_delays(const Procedure& p) {
  std::vector<CheckFinding> out;
  for (std::size_t i = 0; i < p.steps.size(); ++i) {
    const auto* set = std::get_if<SetStep>(&p.steps[i]);
    if (!set) continue;
    bool rate = set->parameter == ProcessingParameter::StirRate || set->parameter == ProcessingParameter::VortexRate;
    if (!rate && set->parameter != ProcessingParameter::HeatingTemp) continue;
    if (set->parameter == ProcessingParameter::StirRate && detail::is_active_setting(*set))
      out.push_back(detail::finding(CheckId::delays, Severity::Warning, i, "delays.prefer_vortex",
                                    "vortexing is preferred to stirring unless stirring was requested"));
    if (!detail::is_active_setting(*set)) continue;

    bool delayed = false;
    for (std::size_t j = i + 1; j < p.steps.size() && !delayed; ++j) {
      if (detail::is_delay_for(p.steps[j], set->plate)) {
        delayed = true;
        break;
      }
      const auto* later = std::get_if<SetStep>(&p.steps[j]);
      if (later && later->plate == set->plate && later->parameter == set->parameter) break;
    }
    if (!delayed)
      out.push_back(detail::finding(CheckId::delays, Severity::Error, i, "delays.missing_delay",
                                    std::string(to_string(set->parameter)) + " on " + set->plate.str() +
                                        " is not followed by a Delay"));
    if (rate) {
      bool ever_reset = false;
      for (std::size_t j = i + 1; j < p.steps.size() && !ever_reset; ++j) {
        const auto* later = std::get_if<SetStep>(&p.steps[j]);
        ever_reset = later && later->plate == set->plate && later->parameter == set->parameter &&
                     !detail::is_active_setting(*later);
      }
      if (!ever_reset) {
        SetStep zero{set->parameter, set->plate, {}};
        for (const auto& [v, _] : set->values) zero.values[v] = 0;
        out.push_back(detail::finding(CheckId::delays, Severity::Error, i, "delays.reset_rate",
                                      std::string(to_string(set->parameter)) + " on " + set->plate.str() +
                                          " is never set back to 0",
                                      Fix{p.steps.size(), 0, {zero}}));
      }
    }
  }
  return out;
}

/// Array bounds, bindings, capping and instrument limits.
inline std::vector<CheckFinding> refine_plates(const Procedure& p) {
  std::vector<CheckFinding> out;
  for (const auto& v : validate_procedure(p)) {
    std::string rule;
    switch (v.kind) {
      case ViolationKind::VialOutOfBounds: rule = "plates.vial_in_array"; break;
      case ViolationKind::UnboundPlate: rule = "plates.bound_plate"; break;
      case ViolationKind::ParameterLimit: rule = "plates.instrument_limits"; break;
      case ViolationKind::CapValue: rule = "plates.cap_value"; break;
      case ViolationKind::NotCappable: rule = "plates.cappable_array"; break;
      default: continue;
    }
    out.push_back(detail::finding(CheckId::plates, v.severity, v.step_index, rule, v.message));
  }
  auto plates = p.plates();
  if (!plates.empty()) {
    int expected = 1;
    for (auto plate : plates) {
      if (plate.number != expected) {
        out.push_back(detail::finding(CheckId::plates, Severity::Warning, std::nullopt, "plates.naming",
                                      "plates are not numbered consecutively from Plate 1 (found " + plate.str() + ")"));
        break;
      }
      ++expected;
    }
  }
  return out;
}

inline bool is_generic_solvent(std::string_view chemical) {
  auto n = autolabs::detail::canonical_name(chemical);
  return n == "solvent" || n == "solvents" || n == "the solvent" || n == "a solvent" || n == "solvent(s)";
}

/// Liquid volumes per vial against the target fill, and named solvents.
inline std::vector<CheckFinding> refine_solvents(const Procedure& p, const CheckContext& ctx) {
  std::vector<CheckFinding> out;
  for (std::size_t i = 0; i < p.steps.size(); ++i)
    if (const auto* add = std::get_if<AddStep>(&p.steps[i]); add && is_generic_solvent(add->chemical))
      out.push_back(detail::finding(CheckId::solvents, Severity::Error, i, "solvents.named_solvent",
                                    "name the solvent (e.g. 'Add water') instead of '" + add->chemical + "'"));
  if (ctx.target_volume_uL.empty()) {
    out.push_back(detail::finding(CheckId::solvents, Severity::Warning, std::nullopt, "solvents.missing_target",
                                  "no target volume given; vial totals not checked"));
    return out;
  }
  std::map<std::pair<PlateId, VialIndex>, double> volume;
  for (const auto& s : p.steps) {
    if (const auto* add = std::get_if<AddStep>(&s)) {
      if (add->unit != Unit::uL) continue;
      for (const auto& [v, x] : add->values) volume[{add->plate, v}] += x;
    } else if (const auto* t = std::get_if<TransferStep>(&s)) {
      if (t->has(TransferFlag::MoveVial)) continue;  // the vial travels, its contents are not added
      for (const auto& [_, target] : t->mapping)
        if (target.amount.unit == Unit::uL) volume[{t->destination, target.destination}] += target.amount.value;
    }
  }
  for (const auto& [key, uL] : volume) {
    auto it = ctx.target_volume_uL.find(key.first);
    if (it == ctx.target_volume_uL.end()) continue;
    double target = it->second;
    if (std::abs(uL - target) > ctx.solvent_tolerance * target)
      out.push_back(detail::finding(CheckId::solvents, Severity::Error, std::nullopt, "solvents.total_volume",
                                    key.first.str() + " " + key.second.str() + " holds " +
                                        autolabs::detail::format_number(std::round(uL * 100) / 100) +
                                        " uL of liquid; target is " + autolabs::detail::format_number(target) + " uL"));
  }
  return out;
}

/// Uniform amounts, distinct bound plates and vial-timer sequencing.
inline std::vector<CheckFinding> refine_transfer(const Procedure& p) {
  std::vector<CheckFinding> out;
  std::set<PlateId> timers_set;
  bool started = false;
  for (const auto& v : validate_procedure(p))
    if (v.kind == ViolationKind::TransferPlates)
      out.push_back(detail::finding(CheckId::transfer, Severity::Error, v.step_index, "transfer.distinct_plates",
                                    v.message));
  for (std::size_t i = 0; i < p.steps.size(); ++i) {
    const auto& s = p.steps[i];
    if (const auto* set = std::get_if<SetStep>(&s)) {
      if (set->parameter == ProcessingParameter::VialTimers) timers_set.insert(set->plate);
      continue;
    }
    const auto* t = std::get_if<TransferStep>(&s);
    if (!t) continue;
    if (!p.arrays.empty())
      for (auto plate : {t->source, t->destination})
        if (!p.arrays.count(plate))
          out.push_back(detail::finding(CheckId::transfer, Severity::Error, i, "transfer.bound_plates",
                                        "transfer references " + plate.str() + ", which has no vial array"));
    if (t->mode == TransferMode::Uniform && !t->mapping.empty()) {
      const auto& a0 = t->mapping.begin()->second.amount;
      bool equal = std::all_of(t->mapping.begin(), t->mapping.end(), [&](const auto& kv) {
        return kv.second.amount.value == a0.value && kv.second.amount.unit == a0.unit;
      });
      if (!equal) {
        TransferStep fixed = *t;
        fixed.mode = TransferMode::Discrete;
        out.push_back(detail::finding(CheckId::transfer, Severity::Error, i, "transfer.uniform_amounts",
                                      "uniform transfer moves different amounts; use a discrete transfer",
                                      Fix{i, 1, {fixed}}));
      }
    }
    if (t->has(TransferFlag::StartVialTimer)) {
      if (!timers_set.count(t->source) && !timers_set.count(t->destination))
        out.push_back(detail::finding(CheckId::transfer, Severity::Error, i, "transfer.timer_before_start",
                                      "StartVialTimer used before any Set VialTimers on " + t->source.str() + " or " +
                                          t->destination.str()));
      started = true;
    }
    if (t->has(TransferFlag::WaitVialTimer) && !started)
      out.push_back(detail::finding(CheckId::transfer, Severity::Error, i, "transfer.wait_after_start",
                                    "WaitVialTimer without an earlier StartVialTimer transfer"));
  }
  return out;
}

inline bool names_several_chemicals(std::string_view chemical) {
  auto n = autolabs::detail::canonical_name(chemical);
  return n.find(" and ") != std::string::npos || n.find(" + ") != std::string::npos ||
         n.find(" & ") != std::string::npos;
}

/// Dispense tags, one chemical per step and solids before non-aqueous liquids.
inline std::vector<CheckFinding> refine_additions(const Procedure& p, const CheckContext& ctx) {
  std::vector<CheckFinding> out;
  for (std::size_t i = 0; i < p.steps.size(); ++i) {
    const auto* add = std::get_if<AddStep>(&p.steps[i]);
    if (!add) continue;
    if (names_several_chemicals(add->chemical))
      out.push_back(detail::finding(CheckId::additions, Severity::Error, i, "additions.one_chemical",
                                    "'" + add->chemical + "' names more than one chemical; add each separately"));
    if (!ctx.tags) continue;
    auto it = ctx.tags->find(i);
    TagSet tags = it == ctx.tags->end() ? TagSet{} : it->second;
    bool solid = detail::is_solid(*add, ctx);
    if (solid && tags.core != CoreTag::Powder)
      out.push_back(detail::finding(CheckId::additions, Severity::Error, i, "additions.powder_for_solids",
                                    add->chemical + " is a solid and needs the Powder tag"));
    if (!solid && tags.core != CoreTag::SyringePump && tags.core != CoreTag::PDT)
      out.push_back(detail::finding(CheckId::additions, Severity::Error, i, "additions.liquid_dispense",
                                    add->chemical + " is a liquid and needs SyringePump or PDT"));
  }

  // Per vial: a non-aqueous liquid must not precede a solid.
  for (std::size_t j = 0; j < p.steps.size(); ++j) {
    const auto* solid = std::get_if<AddStep>(&p.steps[j]);
    if (!solid || !detail::is_solid(*solid, ctx)) continue;
    for (std::size_t i = 0; i < j; ++i) {
      const auto* liquid = std::get_if<AddStep>(&p.steps[i]);
      if (!liquid || liquid->plate != solid->plate || detail::is_solid(*liquid, ctx) || is_aqueous(liquid->chemical))
        continue;
      bool shared = std::any_of(liquid->values.begin(), liquid->values.end(),
                                [&](const auto& kv) { return solid->values.count(kv.first) != 0; });
      if (!shared) continue;
      bool processing_between = false;
      for (std::size_t k = i; k < j; ++k) processing_between = processing_between || detail::is_processing(p.steps[k]);
      std::optional<Fix> fix;
      if (!processing_between) {
        Fix f{i, j - i + 1, {p.steps[j]}};
        for (std::size_t k = i; k < j; ++k) f.replacement.push_back(p.steps[k]);
        fix = std::move(f);
      }
      out.push_back(detail::finding(CheckId::additions, Severity::Error, j, "additions.solid_first",
                                    solid->chemical + " (solid) is added after " + liquid->chemical +
                                        " to the same vials; add the solid first",
                                    std::move(fix)));
      return out;
    }
  }
  return out;
}

inline std::vector<CheckFinding> run_check(CheckId id, const Procedure& p, const CheckContext& ctx) {
  switch (id) {
    case CheckId::efficiency: return refine_efficiency(p);
    case CheckId::units: return refine_units(p, ctx);
    case CheckId::delays: return refine_delays(p);
    case CheckId::plates: return refine_plates(p);
    case CheckId::solvents: return refine_solvents(p, ctx);
    case CheckId::transfer: return refine_transfer(p);
    case CheckId::additions: return refine_additions(p, ctx);
    case CheckId::review: break;
  }
  return {};
}

/// Tags follow their steps through a fix; steps a fix created get defaults.
inline StepTags carry_tags(const Procedure& before, const Procedure& after, const StepTags& tags,
                           const PropertyProvider* props) {
  std::map<std::string, TagSet> by_text;
  for (const auto& [i, t] : tags)
    if (i < before.steps.size()) by_text.emplace(render_step(before.steps[i]), t);
  StepTags out;
  for (std::size_t i = 0; i < after.steps.size(); ++i) {
    if (auto it = by_text.find(render_step(after.steps[i])); it != by_text.end()) {
      out[i] = it->second;
    } else if (props) {
      out[i] = default_tags(after.steps[i], *props);
    }
  }
  return out;
}

struct SelfCheckOutcome {
  Procedure revised;
  std::optional<StepTags> tags;  // guided only: input tags re-indexed to `revised`
  std::vector<CheckFinding> findings;  // remaining after repair (guided) or recorded issues (unguided)
  std::vector<CheckFinding> applied;   // fixes that were applied, guided only
  int iterations = 1;
  bool converged = false;
};

inline bool has_errors(const std::vector<CheckFinding>& fs) {
  return std::any_of(fs.begin(), fs.end(), [](const auto& f) { return f.severity == Severity::Error; });
}

/// Runs the seven checks in order. With auto_fix, each check's rule fixes are
/// applied until none remain before the next check runs.
inline SelfCheckOutcome run_guided(const Procedure& p, const CheckContext& context) {
  SelfCheckOutcome out;
  out.revised = p;
  CheckContext ctx = context;
  if (ctx.auto_fix) {
    for (auto id : kGuidedOrder) {
      for (int guard = 0; guard < 1000; ++guard) {
        auto fs = run_check(id, out.revised, ctx);
        auto fixable = std::find_if(fs.begin(), fs.end(), [](const auto& f) { return f.suggested_fix.has_value(); });
        if (fixable == fs.end()) {
          if (ctx.repair && has_errors(fs))
            if (auto repaired = ctx.repair(id, out.revised, fs)) {
              if (ctx.tags) ctx.tags = carry_tags(out.revised, *repaired, *ctx.tags, ctx.props);
              out.revised = std::move(*repaired);
            }
          break;
        }
        auto next = apply_fix(out.revised, *fixable->suggested_fix);
        if (ctx.tags) ctx.tags = carry_tags(out.revised, next, *ctx.tags, ctx.props);
        out.revised = std::move(next);
        out.applied.push_back(*fixable);
      }
    }
  }
  for (auto id : kGuidedOrder) {
    auto fs = run_check(id, out.revised, ctx);
    out.findings.insert(out.findings.end(), fs.begin(), fs.end());
  }
  out.converged = !has_errors(out.findings);
  out.tags = ctx.tags;
  return out;
}

inline constexpr int kUnguidedLimit = 5;
inline constexpr std::string_view kNoChanges = "NO_CHANGES";

inline std::string unguided_instruction(const Procedure& p) {
  return "Review the final steps below against every instruction in the system prompt and everything the user asked "
         "for in this conversation.\n" +
         render_procedure(p) +
         "If they fully adhere, reply with exactly " + std::string(kNoChanges) +
         ". Otherwise reply with the complete corrected <final-steps> block and nothing else.";
}

struct UnguidedOptions {
  std::string model;
  std::optional<std::string> reasoning_effort;
  int limit = kUnguidedLimit;
};

/// Holistic model review. Each call counts as one iteration; a malformed reply
/// is retried once, after which the previous version is kept.
inline SelfCheckOutcome run_unguided(const Procedure& p, const std::vector<llm::Message>& transcript,
                                     const std::string& system_prompt, llm::ChatClient& client,
                                     const UnguidedOptions& options = {},
                                     std::vector<llm::Message>* exchange = nullptr) {
  SelfCheckOutcome out;
  out.revised = p;
  out.iterations = 0;
  int limit = std::min(options.limit, kUnguidedLimit);
  bool retrying = false;
  while (out.iterations < limit) {
    llm::ChatRequest req;
    req.channel = llm::Channel::self_check;
    req.model = options.model;
    req.reasoning_effort = options.reasoning_effort;
    req.system = system_prompt;
    req.messages = transcript;
    llm::Message ask{llm::Role::user, unguided_instruction(out.revised), std::string("SelfChecks"), {}, {}, {}};
    req.messages.push_back(ask);
    auto reply = client.complete(req);
    reply.agent = "SelfChecks";
    ++out.iterations;
    if (exchange) {
      exchange->push_back(ask);
      exchange->push_back(reply);
    }
    auto trimmed = autolabs::detail::trim(reply.content);
    std::optional<Procedure> revision;
    bool malformed = false;
    try {
      revision = extract_final_steps(reply.content);
    } catch (const std::exception&) {
      malformed = true;
    }
    if (!revision && !malformed && trimmed.find(kNoChanges) != std::string_view::npos) {
      out.converged = true;
      break;
    }
    if (!revision) {
      if (!retrying) {
        retrying = true;
        continue;
      }
      out.findings.push_back({CheckId::review, Severity::Warning, std::nullopt, "review.malformed_revision",
                              "review reply was neither NO_CHANGES nor a parseable <final-steps> block; kept the "
                              "previous version",
                              std::nullopt});
      break;
    }
    retrying = false;
    revision->arrays = out.revised.arrays;
    if (render_procedure(*revision) == render_procedure(out.revised)) {
      out.converged = true;
      break;
    }
    out.revised = std::move(*revision);
  }
  return out;
}

inline nlohmann::json to_json(const CheckFinding& f) {
  nlohmann::json j{{"check", std::string(to_string(f.check))},
                   {"severity", f.severity == Severity::Error ? "error" : "warning"},
                   {"rule", f.rule},
                   {"message", f.message}};
  j["step_index"] = f.step_index ? nlohmann::json(*f.step_index) : nlohmann::json(nullptr);
  if (f.suggested_fix) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : f.suggested_fix->replacement) steps.push_back(render_step(s));
    j["suggested_fix"] = {{"first", f.suggested_fix->first}, {"count", f.suggested_fix->count}, {"steps", steps}};
  }
  return j;
}

inline nlohmann::json to_json(const SelfCheckOutcome& o) {
  nlohmann::json fs = nlohmann::json::array(), applied = nlohmann::json::array();
  for (const auto& f : o.findings) fs.push_back(to_json(f));
  for (const auto& f : o.applied) applied.push_back(to_json(f));
  return {{"converged", o.converged},
          {"iterations", o.iterations},
          {"findings", fs},
          {"applied_fixes", applied},
          {"revised", render_procedure(o.revised)}};
}

}  // namespace autolabs::checks
