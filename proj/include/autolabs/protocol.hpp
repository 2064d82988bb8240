#pragma once

// Step language for the liquid-handling platform: vial/plate types, the step
// grammar (Add / Set / Transfer), a canonical printer and structural checks.

#include <array>
#include <compare>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "autolabs/detail/text.hpp"

namespace autolabs {

/// Malformed step text. `position` is a byte offset into the parsed input.
class SyntaxError : public std::runtime_error {
 public:
  SyntaxError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " (at offset " + std::to_string(position) + ")"), position_(position) {}
  explicit SyntaxError(const std::string& what) : std::runtime_error(what), position_(0) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

/// Well-formed text carrying an unusable value (non-numeric amount, unknown parameter).
class ValueError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnknownVialSize : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct VialIndex {
  char row = 'A';  // 'A'..'H'
  int col = 1;     // 1..12

  auto operator<=>(const VialIndex&) const = default;

  int row_number() const { return row - 'A' + 1; }
  std::string str() const { return std::string(1, row) + std::to_string(col); }

  /// Accepts "a1" / "A1"; throws ValueError outside A-H x 1-12.
  static VialIndex parse(std::string_view text) {
    text = detail::trim(text);
    if (text.size() < 2 || !std::isalpha(static_cast<unsigned char>(text[0])))
      throw ValueError("invalid vial index '" + std::string(text) + "'");
    char row = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
    auto digits = text.substr(1);
    int col = 0;
    for (char c : digits) {
      if (!std::isdigit(static_cast<unsigned char>(c)) || col > 99)
        throw ValueError("invalid vial index '" + std::string(text) + "'");
      col = col * 10 + (c - '0');
    }
    if (row < 'A' || row > 'H' || col < 1 || col > 12)
      throw ValueError("vial index '" + std::string(text) + "' outside A-H x 1-12");
    return {row, col};
  }
};

/// Plates are referred to as "Plate N"; the number is the identity.
struct PlateId {
  int number = 1;
  auto operator<=>(const PlateId&) const = default;
  std::string str() const { return "Plate " + std::to_string(number); }
};

struct ArraySpec {
  int rows = 0;
  int cols = 0;
  double vial_volume_mL = 0;
  bool cappable = true;

  bool operator==(const ArraySpec&) const = default;
  bool contains(VialIndex v) const { return v.row_number() >= 1 && v.row_number() <= rows && v.col >= 1 && v.col <= cols; }
};

/// The seven standard vial sizes.
inline const std::array<ArraySpec, 7>& vial_catalog() {
  static const std::array<ArraySpec, 7> catalog{{
      {8, 12, 1.0, false},
      {8, 12, 1.2, false},
      {6, 8, 2.0, true},
      {4, 6, 4.0, true},
      {4, 6, 8.0, true},
      {2, 4, 20.0, true},
      {1, 2, 125.0, false},
  }};
  return catalog;
}

inline ArraySpec array_for_vial_volume(double volume_mL) {
  for (const auto& spec : vial_catalog())
    if (std::abs(spec.vial_volume_mL - volume_mL) < 1e-9) return spec;
  throw UnknownVialSize("no standard vial of " + detail::format_number(volume_mL) + " mL");
}

enum class Unit { mg, uL };

inline std::string_view to_string(Unit u) { return u == Unit::mg ? "mg" : "uL"; }

inline std::optional<Unit> parse_unit(std::string_view text) {
  auto t = detail::to_lower(detail::trim(text));
  if (t == "mg") return Unit::mg;
  if (t == "ul" || t == "\xc2\xb5l" || t == "\xce\xbcl" || t == "microliter" || t == "microliters") return Unit::uL;
  return std::nullopt;
}

struct Amount {
  double value = 0;
  Unit unit = Unit::uL;
  bool operator==(const Amount&) const = default;
};

enum class Action { Add, Set, Transfer, Unknown };

inline std::string_view to_string(Action a) {
  switch (a) {
    case Action::Add: return "Add";
    case Action::Set: return "Set";
    case Action::Transfer: return "Transfer";
    case Action::Unknown: break;
  }
  return "Unknown";
}

enum class ProcessingParameter { HeatingTemp, Cap, Uncap, Delay, StirRate, VortexRate, VialTimers };

inline constexpr std::array<ProcessingParameter, 7> kAllParameters{
    ProcessingParameter::HeatingTemp, ProcessingParameter::Cap,        ProcessingParameter::Uncap,
    ProcessingParameter::Delay,       ProcessingParameter::StirRate,   ProcessingParameter::VortexRate,
    ProcessingParameter::VialTimers};

inline std::string_view to_string(ProcessingParameter p) {
  switch (p) {
    case ProcessingParameter::HeatingTemp: return "HeatingTemp";
    case ProcessingParameter::Cap: return "Cap";
    case ProcessingParameter::Uncap: return "Uncap";
    case ProcessingParameter::Delay: return "Delay";
    case ProcessingParameter::StirRate: return "StirRate";
    case ProcessingParameter::VortexRate: return "VortexRate";
    case ProcessingParameter::VialTimers: return "VialTimers";
  }
  return "";
}

inline std::optional<ProcessingParameter> parse_parameter(std::string_view word) {
  for (auto p : kAllParameters)
    if (detail::iequals(word, to_string(p))) return p;
  if (detail::iequals(word, "VialTimer")) return ProcessingParameter::VialTimers;
  return std::nullopt;
}

enum class TransferMode { Uniform, Discrete };

inline std::string_view to_string(TransferMode m) { return m == TransferMode::Uniform ? "Uniform" : "Discrete"; }

enum class TransferFlag { MoveVial, StartVialTimer, WaitVialTimer };

inline std::string_view to_string(TransferFlag f) {
  switch (f) {
    case TransferFlag::MoveVial: return "MoveVial";
    case TransferFlag::StartVialTimer: return "StartVialTimer";
    case TransferFlag::WaitVialTimer: return "WaitVialTimer";
  }
  return "";
}

inline std::optional<TransferFlag> parse_flag(std::string_view word) {
  word = detail::trim(word);
  if (detail::iequals(word, "MoveVial") || detail::iequals(word, "MoveVials")) return TransferFlag::MoveVial;
  if (detail::iequals(word, "StartVialTimer") || detail::iequals(word, "StartVialTimers"))
    return TransferFlag::StartVialTimer;
  if (detail::iequals(word, "WaitVialTimer") || detail::iequals(word, "WaitVialTimers"))
    return TransferFlag::WaitVialTimer;
  return std::nullopt;
}

using VialValues = std::map<VialIndex, double>;

struct AddStep {
  std::string chemical;
  Unit unit = Unit::uL;
  PlateId plate;
  VialValues values;
  bool operator==(const AddStep&) const = default;
};

struct SetStep {
  ProcessingParameter parameter = ProcessingParameter::Delay;
  PlateId plate;
  VialValues values;
  bool operator==(const SetStep&) const = default;
};

struct TransferTarget {
  VialIndex destination;
  Amount amount;
  bool operator==(const TransferTarget&) const = default;
};

struct TransferStep {
  TransferMode mode = TransferMode::Discrete;
  PlateId source;
  PlateId destination;
  std::map<VialIndex, TransferTarget> mapping;
  std::set<TransferFlag> flags;
  bool operator==(const TransferStep&) const = default;

  bool has(TransferFlag f) const { return flags.count(f) != 0; }
};

using Step = std::variant<AddStep, SetStep, TransferStep>;

inline Action action_of(const Step& s) {
  if (std::holds_alternative<AddStep>(s)) return Action::Add;
  if (std::holds_alternative<SetStep>(s)) return Action::Set;
  return Action::Transfer;
}

/// Plates touched by a step (one, or two for transfers).
inline std::vector<PlateId> plates_of(const Step& s) {
  if (auto* a = std::get_if<AddStep>(&s)) return {a->plate};
  if (auto* p = std::get_if<SetStep>(&s)) return {p->plate};
  const auto& t = std::get<TransferStep>(s);
  if (t.source == t.destination) return {t.source};
  return {t.source, t.destination};
}

struct Procedure {
  std::vector<Step> steps;
  std::map<PlateId, ArraySpec> arrays;  // optional bindings

  bool operator==(const Procedure&) const = default;

  std::set<PlateId> plates() const {
    std::set<PlateId> out;
    for (const auto& s : steps)
      for (auto p : plates_of(s)) out.insert(p);
    return out;
  }
};

/// "Action | Parameter | Plate" projection used for fuzzy step matching.
struct NormalizedStep {
  Action action = Action::Unknown;
  std::string parameter;
  std::string plate;
  bool operator==(const NormalizedStep&) const = default;
};

inline NormalizedStep normalize_step(const Step& s) {
  return std::visit(
      [](const auto& step) -> NormalizedStep {
        using T = std::decay_t<decltype(step)>;
        if constexpr (std::is_same_v<T, AddStep>) {
          return {Action::Add, step.chemical, step.plate.str()};
        } else if constexpr (std::is_same_v<T, SetStep>) {
          return {Action::Set, std::string(to_string(step.parameter)), step.plate.str()};
        } else {
          return {Action::Transfer, "transfer", step.source.str()};
        }
      },
      s);
}

// ---------------------------------------------------------------------------
// Parser

namespace detail {

class StepParser {
 public:
  StepParser(std::string_view text, std::size_t base) : text_(text), base_(base) {}

  Step parse() {
    auto brace = text_.find('{');
    if (brace == std::string_view::npos) fail("missing vial dictionary", text_.size());
    auto description = text_.substr(0, brace);
    std::size_t pos = 0;
    skip_ws(description, pos);
    auto first = read_word(description, pos);
    if (iequals(first, "add")) {
      auto step = parse_add(description, pos);
      step.values = parse_values(brace);
      return step;
    }
    if (iequals(first, "set")) {
      auto step = parse_set(description, pos);
      step.values = parse_values(brace);
      return step;
    }
    if (iequals(first, "uniform") || iequals(first, "discrete") || iequals(first, "transfer")) {
      pos = 0;
      auto step = parse_transfer_header(description, pos);
      step.mapping = parse_mapping(brace);
      return step;
    }
    fail("step must start with Add, Set or a transfer mode, got '" + std::string(first) + "'", 0);
  }

 private:
  [[noreturn]] void fail(const std::string& msg, std::size_t at) const { throw SyntaxError(msg, base_ + at); }

  static void skip_ws(std::string_view s, std::size_t& pos) {
    while (pos < s.size() && is_space(s[pos])) ++pos;
  }

  // A run of non-space characters, trailing '.' excluded so "Plate 1." works.
  static std::string_view read_token(std::string_view s, std::size_t& pos) {
    skip_ws(s, pos);
    auto start = pos;
    while (pos < s.size() && !is_space(s[pos]) && s[pos] != '(') ++pos;
    auto tok = s.substr(start, pos - start);
    if (tok.size() > 1 && tok.back() == '.') {
      tok.remove_suffix(1);
      --pos;
    }
    return tok;
  }

  static std::string_view read_word(std::string_view s, std::size_t& pos) {
    skip_ws(s, pos);
    auto start = pos;
    while (pos < s.size() && std::isalpha(static_cast<unsigned char>(s[pos]))) ++pos;
    return s.substr(start, pos - start);
  }

  PlateId read_plate(std::string_view s, std::size_t& pos) {
    auto word = read_token(s, pos);
    if (!iequals(word, "plate")) fail("expected 'Plate', got '" + std::string(word) + "'", pos);
    auto num = read_token(s, pos);
    int n = 0;
    auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), n);
    if (num.empty() || ec != std::errc{} || ptr != num.data() + num.size() || n < 1)
      fail("expected plate number, got '" + std::string(num) + "'", pos);
    return {n};
  }

  // Optional '.' then only whitespace until `s` ends.
  void expect_end(std::string_view s, std::size_t pos) {
    skip_ws(s, pos);
    if (pos < s.size() && s[pos] == '.') ++pos;
    skip_ws(s, pos);
    if (pos != s.size()) fail("unexpected text '" + std::string(trim(s.substr(pos))) + "'", pos);
  }

  AddStep parse_add(std::string_view s, std::size_t pos) {
    AddStep step;
    // The unit is the last parenthesised group ahead of " to ... Plate".
    auto to_pos = irfind(s, " to ");
    if (to_pos == std::string_view::npos || to_pos < pos) fail("Add step lacks 'to <plate>'", s.size());
    auto head = s.substr(0, to_pos);
    auto close = head.rfind(')');
    auto open = head.rfind('(');
    if (close == std::string_view::npos || open == std::string_view::npos || open > close ||
        !trim(head.substr(close + 1)).empty())
      fail("Add step lacks a (unit) after the chemical name", to_pos);
    auto unit = parse_unit(head.substr(open + 1, close - open - 1));
    if (!unit) throw ValueError("unknown unit '" + std::string(head.substr(open + 1, close - open - 1)) + "'");
    step.unit = *unit;
    step.chemical = std::string(trim(head.substr(pos, open - pos)));
    if (step.chemical.empty()) fail("missing chemical name", pos);

    std::size_t p = to_pos + 4;
    std::size_t save = p;
    for (std::string_view filler : {"the", "vials", "vial", "in"}) {
      save = p;
      auto tok = read_token(s, p);
      if (!iequals(tok, filler)) p = save;
    }
    step.plate = read_plate(s, p);
    expect_end(s, p);
    return step;
  }

  static bool is_set_filler(std::string_view tok) {
    static constexpr std::string_view kWords[] = {"to",  "in",  "for", "vials", "vial",    "the",    "of",   "at",
                                                  "degc", "c",  "deg", "rpm",   "min",     "mins",   "minute",
                                                  "minutes", "h", "hr", "hours", "celsius", "\xc2\xb0""c"};
    for (auto w : kWords)
      if (iequals(tok, w)) return true;
    return parse_decimal(tok).has_value();
  }

  SetStep parse_set(std::string_view s, std::size_t pos) {
    SetStep step;
    auto word_pos = pos;
    auto word = read_token(s, pos);
    auto param = parse_parameter(word);
    if (!param) throw ValueError("unknown processing parameter '" + std::string(word) + "' at offset " +
                                 std::to_string(base_ + word_pos));
    step.parameter = *param;
    while (true) {
      auto save = pos;
      auto tok = read_token(s, pos);
      if (tok.empty()) fail("Set step lacks a plate", pos);
      if (iequals(tok, "plate")) {
        pos = save;
        break;
      }
      if (!is_set_filler(tok)) fail("unexpected word '" + std::string(tok) + "' in Set step", save);
    }
    step.plate = read_plate(s, pos);
    expect_end(s, pos);
    return step;
  }

  TransferStep parse_transfer_header(std::string_view s, std::size_t& pos) {
    TransferStep step;
    std::optional<TransferMode> mode;
    bool saw_transfer = false;
    for (int i = 0; i < 2; ++i) {
      auto save = pos;
      auto tok = read_token(s, pos);
      if (iequals(tok, "uniform") && !mode) {
        mode = TransferMode::Uniform;
      } else if (iequals(tok, "discrete") && !mode) {
        mode = TransferMode::Discrete;
      } else if (iequals(tok, "transfer") && !saw_transfer) {
        saw_transfer = true;
      } else {
        pos = save;
        break;
      }
    }
    if (!saw_transfer) fail("expected 'transfer'", pos);
    if (!mode) fail("transfer must be Uniform or Discrete", pos);
    step.mode = *mode;
    if (!iequals(read_token(s, pos), "from")) fail("expected 'from'", pos);
    auto save = pos;
    if (!iequals(read_token(s, pos), "the")) pos = save;
    step.source = read_plate(s, pos);
    if (!iequals(read_token(s, pos), "to")) fail("expected 'to'", pos);
    save = pos;
    if (!iequals(read_token(s, pos), "the")) pos = save;
    step.destination = read_plate(s, pos);
    skip_ws(s, pos);
    if (pos < s.size() && s[pos] == '.') ++pos;
    skip_ws(s, pos);
    if (pos < s.size() && s[pos] == '(') {
      auto close = s.find(')', pos);
      if (close == std::string_view::npos) fail("unterminated flag list", pos);
      for (auto part : split(s.substr(pos + 1, close - pos - 1), ',')) {
        auto flag = parse_flag(part);
        if (!flag) throw ValueError("unknown transfer flag '" + std::string(trim(part)) + "'");
        step.flags.insert(*flag);
      }
      pos = close + 1;
    }
    expect_end(s, pos);
    return step;
  }

  // Splits the body of the dictionary starting at `open` into key/value texts.
  struct Entry {
    std::string_view key;
    std::string_view value;
    std::size_t offset;
  };

  std::vector<Entry> dictionary_entries(std::size_t open) {
    std::vector<Entry> entries;
    std::size_t pos = open + 1;
    auto s = text_;
    while (true) {
      skip_ws(s, pos);
      if (pos >= s.size()) fail("unterminated vial dictionary", pos);
      if (s[pos] == '}') {
        ++pos;
        break;
      }
      auto colon = s.find(':', pos);
      if (colon == std::string_view::npos) fail("dictionary entry without ':'", pos);
      auto key = trim(s.substr(pos, colon - pos));
      if (key.empty() || key.find_first_of("{}[],") != std::string_view::npos) fail("malformed dictionary key", pos);
      std::size_t v = colon + 1;
      skip_ws(s, v);
      if (v < s.size() && s[v] == '{') fail("nested dictionary is not allowed", v);
      std::size_t end = v;
      if (v < s.size() && s[v] == '[') {
        end = s.find(']', v);
        if (end == std::string_view::npos) fail("unterminated transfer target", v);
        ++end;
      } else {
        while (end < s.size() && s[end] != ',' && s[end] != '}') {
          if (s[end] == '{' || s[end] == ':') fail("nested dictionary is not allowed", end);
          ++end;
        }
      }
      entries.push_back({key, s.substr(v, end - v), pos});
      pos = end;
      skip_ws(s, pos);
      if (pos < s.size() && s[pos] == ',') ++pos;
    }
    skip_ws(s, pos);
    if (pos != s.size()) fail("unexpected text after vial dictionary", pos);
    return entries;
  }

  VialIndex read_key(const Entry& e) {
    if (e.key.find("..") != std::string_view::npos) fail("placeholder key '" + std::string(e.key) + "'", e.offset);
    try {
      return VialIndex::parse(e.key);
    } catch (const ValueError& err) {
      fail(err.what(), e.offset);
    }
  }

  VialValues parse_values(std::size_t open) {
    VialValues values;
    for (const auto& e : dictionary_entries(open)) {
      auto vial = read_key(e);
      if (!e.value.empty() && e.value.front() == '[') fail("transfer target in a non-transfer step", e.offset);
      auto number = parse_decimal(e.value);
      if (!number) throw ValueError("non-numeric value '" + std::string(trim(e.value)) + "' for vial " + vial.str());
      if (*number < 0) throw ValueError("negative value for vial " + vial.str());
      if (!values.emplace(vial, *number).second) fail("duplicate vial " + vial.str(), e.offset);
    }
    return values;
  }

  std::map<VialIndex, TransferTarget> parse_mapping(std::size_t open) {
    std::map<VialIndex, TransferTarget> mapping;
    for (const auto& e : dictionary_entries(open)) {
      auto vial = read_key(e);
      if (e.value.size() < 2 || e.value.front() != '[' || e.value.back() != ']')
        fail("transfer entry must be [vial, amount unit]", e.offset);
      auto parts = split(e.value.substr(1, e.value.size() - 2), ',');
      if (parts.size() != 2) fail("transfer entry must be [vial, amount unit]", e.offset);
      TransferTarget target;
      try {
        target.destination = VialIndex::parse(parts[0]);
      } catch (const ValueError& err) {
        fail(err.what(), e.offset);
      }
      auto amount = trim(parts[1]);
      std::size_t split_at = 0;
      while (split_at < amount.size() &&
             (std::isdigit(static_cast<unsigned char>(amount[split_at])) || amount[split_at] == '.' ||
              amount[split_at] == '-'))
        ++split_at;
      auto number_text = amount.substr(0, split_at);
      auto unit_text = trim(amount.substr(split_at));
      auto number = parse_decimal(number_text);
      if (!number) throw ValueError("non-numeric transfer amount '" + std::string(amount) + "'");
      if (*number < 0) throw ValueError("negative transfer amount for vial " + vial.str());
      if (unit_text.empty()) fail("transfer amount for " + vial.str() + " lacks a unit", e.offset);
      auto unit = parse_unit(unit_text);
      if (!unit) throw ValueError("unknown unit '" + std::string(unit_text) + "'");
      target.amount = {*number, *unit};
      if (!mapping.emplace(vial, target).second) fail("duplicate vial " + vial.str(), e.offset);
    }
    return mapping;
  }

  std::string_view text_;
  std::size_t base_;
};

}  // namespace detail

/// Parses one `<step>...</step>` block or its inner text.
inline Step parse_step(std::string_view text) {
  std::size_t base = 0;
  while (base < text.size() && detail::is_space(text[base])) ++base;
  auto body = detail::trim(text);
  if (detail::istarts_with(body, "<step>")) {
    if (body.size() < 13 || !detail::iequals(body.substr(body.size() - 7), "</step>"))
      throw SyntaxError("<step> without matching </step>", base);
    body = body.substr(6, body.size() - 13);
    base += 6;
  } else if (detail::ifind(body, "<step") != std::string_view::npos ||
             detail::ifind(body, "</step") != std::string_view::npos) {
    throw SyntaxError("malformed step tags", base);
  }
  while (!body.empty() && detail::is_space(body.front())) {
    body.remove_prefix(1);
    ++base;
  }
  return detail::StepParser(detail::trim(body), base).parse();
}

/// Per-step diagnostics when a `<final-steps>` block is rejected.
class FinalStepsError : public SyntaxError {
 public:
  struct Diagnostic {
    std::size_t step_index;
    std::string message;
  };

  explicit FinalStepsError(std::vector<Diagnostic> diagnostics)
      : SyntaxError(summarize(diagnostics)), diagnostics_(std::move(diagnostics)) {}

  const std::vector<Diagnostic>& diagnostics() const noexcept { return diagnostics_; }

 private:
  static std::string summarize(const std::vector<Diagnostic>& d) {
    std::string out = "final-steps block rejected:";
    for (const auto& x : d) out += " [step " + std::to_string(x.step_index + 1) + "] " + x.message + ";";
    return out;
  }

  std::vector<Diagnostic> diagnostics_;
};

/// Returns the procedure in the last `<final-steps>` block of a message, or
/// nullopt when the message has none. Any unparseable step rejects the block.
inline std::optional<Procedure> extract_final_steps(std::string_view message) {
  auto open = detail::irfind(message, "<final-steps>");
  if (open == std::string_view::npos) return std::nullopt;
  auto content_start = open + std::string_view("<final-steps>").size();
  auto close = detail::ifind(message, "</final-steps>", content_start);
  if (close == std::string_view::npos) throw SyntaxError("<final-steps> without closing tag", open);
  auto block = message.substr(content_start, close - content_start);

  std::vector<std::string_view> raw;
  std::size_t pos = 0;
  while (true) {
    auto s = detail::ifind(block, "<step>", pos);
    if (s == std::string_view::npos) break;
    auto e = detail::ifind(block, "</step>", s);
    if (e == std::string_view::npos) throw SyntaxError("<step> without </step> inside final-steps", content_start + s);
    raw.push_back(block.substr(s, e + 7 - s));
    pos = e + 7;
  }
  if (raw.empty()) throw SyntaxError("final-steps block contains no steps", content_start);

  Procedure proc;
  std::vector<FinalStepsError::Diagnostic> errors;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    try {
      proc.steps.push_back(parse_step(raw[i]));
    } catch (const std::exception& e) {
      errors.push_back({i, e.what()});
    }
  }
  if (!errors.empty()) throw FinalStepsError(std::move(errors));
  return proc;
}

// ---------------------------------------------------------------------------
// Printer

inline std::string render_values(const VialValues& values) {
  std::string out = "{";
  bool first = true;
  for (const auto& [vial, value] : values) {
    if (!first) out += ", ";
    first = false;
    out += vial.str() + ": " + detail::format_number(value);
  }
  return out + "}";
}

/// Canonical text; `parse_step(render_step(s)) == s`.
inline std::string render_step(const Step& s) {
  return std::visit(
      [](const auto& step) -> std::string {
        using T = std::decay_t<decltype(step)>;
        if constexpr (std::is_same_v<T, AddStep>) {
          return "Add " + step.chemical + " (" + std::string(to_string(step.unit)) + ") to vials in " +
                 step.plate.str() + ". " + render_values(step.values);
        } else if constexpr (std::is_same_v<T, SetStep>) {
          return "Set " + std::string(to_string(step.parameter)) + " in vials in " + step.plate.str() + ". " +
                 render_values(step.values);
        } else {
          std::string out = std::string(to_string(step.mode)) + " transfer from " + step.source.str() + " to " +
                            step.destination.str() + ".";
          if (!step.flags.empty()) {
            out += " (";
            bool first = true;
            for (auto f : step.flags) {
              if (!first) out += ", ";
              first = false;
              out += to_string(f);
            }
            out += ")";
          }
          out += " {";
          bool first = true;
          for (const auto& [vial, target] : step.mapping) {
            if (!first) out += ", ";
            first = false;
            out += vial.str() + ": [" + target.destination.str() + ", " + detail::format_number(target.amount.value) +
                   " " + std::string(to_string(target.amount.unit)) + "]";
          }
          return out + "}";
        }
      },
      s);
}

/// `<final-steps>` block with one `<step>` per line.
inline std::string render_procedure(const Procedure& p) {
  std::string out = "<final-steps>\n";
  for (const auto& s : p.steps) out += "<step> " + render_step(s) + " </step>\n";
  return out + "</final-steps>\n";
}

// ---------------------------------------------------------------------------
// Structural validation

enum class ViolationKind {
  VialOutOfBounds,
  UnboundPlate,
  ParameterLimit,
  CapValue,
  NotCappable,
  TransferPlates,
  WorkingVolume,
};

enum class Severity { Error, Warning };

struct Violation {
  ViolationKind kind;
  Severity severity = Severity::Error;
  std::size_t step_index = 0;
  std::optional<VialIndex> vial;
  std::string message;
};

struct Limits {
  static constexpr double kMinHeatingTemp = 25;
  static constexpr double kMaxHeatingTemp = 180;
  static constexpr double kMaxStirRate = 700;
  static constexpr double kMaxVortexRate = 1000;
};

struct ValidationOptions {
  // Working volume between 10 and 80 percent of the vial; reported as warnings.
  bool check_working_volume = false;
};

inline std::vector<Violation> validate_procedure(const Procedure& p, const ValidationOptions& options = {}) {
  std::vector<Violation> out;
  const bool bound = !p.arrays.empty();

  auto check_vial = [&](std::size_t i, PlateId plate, VialIndex v) {
    if (!bound) return;
    auto it = p.arrays.find(plate);
    if (it == p.arrays.end()) return;
    if (!it->second.contains(v))
      out.push_back({ViolationKind::VialOutOfBounds, Severity::Error, i, v,
                     "vial " + v.str() + " outside " + std::to_string(it->second.rows) + "x" +
                         std::to_string(it->second.cols) + " array of " + plate.str()});
  };

  for (std::size_t i = 0; i < p.steps.size(); ++i) {
    const auto& step = p.steps[i];
    if (bound)
      for (auto plate : plates_of(step))
        if (!p.arrays.count(plate))
          out.push_back({ViolationKind::UnboundPlate, Severity::Error, i, std::nullopt,
                         plate.str() + " has no vial array binding"});

    if (auto* add = std::get_if<AddStep>(&step)) {
      for (const auto& [v, _] : add->values) check_vial(i, add->plate, v);
    } else if (auto* set = std::get_if<SetStep>(&step)) {
      for (const auto& [v, value] : set->values) {
        check_vial(i, set->plate, v);
        auto limit = [&](bool ok, const std::string& what) {
          if (!ok) out.push_back({ViolationKind::ParameterLimit, Severity::Error, i, v, what});
        };
        switch (set->parameter) {
          case ProcessingParameter::HeatingTemp:
            limit(value >= Limits::kMinHeatingTemp && value <= Limits::kMaxHeatingTemp,
                  "HeatingTemp " + detail::format_number(value) + " outside 25-180 C at " + v.str());
            break;
          case ProcessingParameter::StirRate:
            limit(value <= Limits::kMaxStirRate, "StirRate exceeds 700 rpm at " + v.str());
            break;
          case ProcessingParameter::VortexRate:
            limit(value <= Limits::kMaxVortexRate, "VortexRate exceeds 1000 rpm at " + v.str());
            break;
          case ProcessingParameter::Cap:
          case ProcessingParameter::Uncap:
            if (value != 0 && value != 1)
              out.push_back({ViolationKind::CapValue, Severity::Error, i, v,
                             std::string(to_string(set->parameter)) + " value must be 0 or 1 at " + v.str()});
            break;
          case ProcessingParameter::Delay:
          case ProcessingParameter::VialTimers:
            break;
        }
      }
      if ((set->parameter == ProcessingParameter::Cap || set->parameter == ProcessingParameter::Uncap) && bound) {
        auto it = p.arrays.find(set->plate);
        if (it != p.arrays.end() && !it->second.cappable)
          out.push_back({ViolationKind::NotCappable, Severity::Error, i, std::nullopt,
                         detail::format_number(it->second.vial_volume_mL) +
                             " mL vials cannot be capped or uncapped automatically"});
      }
    } else {
      const auto& t = std::get<TransferStep>(step);
      if (t.source == t.destination)
        out.push_back({ViolationKind::TransferPlates, Severity::Error, i, std::nullopt,
                       "transfer must reference two distinct plates"});
      for (const auto& [from, target] : t.mapping) {
        check_vial(i, t.source, from);
        check_vial(i, t.destination, target.destination);
      }
    }
  }

  if (options.check_working_volume && bound) {
    std::map<std::pair<PlateId, VialIndex>, double> volume;
    for (const auto& step : p.steps)
      if (auto* add = std::get_if<AddStep>(&step); add && add->unit == Unit::uL)
        for (const auto& [v, value] : add->values) volume[{add->plate, v}] += value;
    for (const auto& [key, uL] : volume) {
      auto it = p.arrays.find(key.first);
      if (it == p.arrays.end()) continue;
      double fraction = uL / (it->second.vial_volume_mL * 1000.0);
      if (fraction < 0.10 || fraction > 0.80)
        out.push_back({ViolationKind::WorkingVolume, Severity::Warning, p.steps.size(), key.second,
                       key.first.str() + " " + key.second.str() + " filled to " +
                           detail::format_number(std::round(fraction * 1000) / 10) + "% of vial volume"});
    }
  }
  return out;
}

}  // namespace autolabs
