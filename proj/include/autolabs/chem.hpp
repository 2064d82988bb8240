#pragma once

// Stoichiometry tools used by the Chemical Calculations agent, plus dilution and
// solvent bookkeeping. Quantities carry their unit in the type; the property
// provider supplies molecular weight (g/mol) and density (g/mL).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include "autolabs/detail/text.hpp"
#include "autolabs/protocol.hpp"

namespace autolabs {

template <class Tag>
struct Quantity {
  double value = 0;
  auto operator<=>(const Quantity&) const = default;
};

using Milligrams = Quantity<struct MilligramsTag>;
using Microliters = Quantity<struct MicrolitersTag>;
using Liters = Quantity<struct LitersTag>;
using Moles = Quantity<struct MolesTag>;
using Molar = Quantity<struct MolarTag>;  // mol/L

class UnknownChemical : public std::runtime_error {
 public:
  explicit UnknownChemical(const std::string& name) : std::runtime_error("unknown chemical '" + name + "'") {}
};

class NonPositiveDensity : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class MissingWeightPercent : public std::runtime_error {
 public:
  explicit MissingWeightPercent(const std::string& name)
      : std::runtime_error("'" + name + "' does not name an n% solution; pass e.g. '28% " + name + "'") {}
};

class ImpossibleDilution : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class Overfill : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class TargetExceedsStock : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

enum class PhysicalState { solid, liquid };

inline std::string_view to_string(PhysicalState s) { return s == PhysicalState::solid ? "solid" : "liquid"; }

struct ChemicalProperties {
  std::string name;
  double molecular_weight = 0;  // g/mol
  double density = 0;           // g/mL
  PhysicalState physical_state = PhysicalState::liquid;
  std::optional<double> weight_percent;  // (0, 100]

  bool operator==(const ChemicalProperties&) const = default;
};

class PropertyProvider {
 public:
  virtual ~PropertyProvider() = default;
  /// Throws UnknownChemical when the name cannot be resolved.
  virtual ChemicalProperties lookup(std::string_view name) const = 0;
};

/// "28% ammonia", "1 % X", "0.5\% X in Y".
struct PercentName {
  double percent = 0;
  std::string solute;
  std::string solvent;  // empty when no "in Y" clause
};

inline std::optional<PercentName> parse_percent_name(std::string_view name) {
  name = detail::trim(name);
  std::size_t i = 0;
  while (i < name.size() && (std::isdigit(static_cast<unsigned char>(name[i])) || name[i] == '.')) ++i;
  if (i == 0) return std::nullopt;
  auto number = detail::parse_decimal(name.substr(0, i));
  auto rest = detail::trim(name.substr(i));
  if (!rest.empty() && rest.front() == '\\') rest.remove_prefix(1);
  if (!number || rest.empty() || rest.front() != '%') return std::nullopt;
  rest = detail::trim(rest.substr(1));
  if (rest.empty() || *number <= 0 || *number > 100) return std::nullopt;
  PercentName out{*number, std::string(rest), {}};
  if (auto in = detail::ifind(rest, " in "); in != std::string_view::npos) {
    out.solute = std::string(detail::trim(rest.substr(0, in)));
    out.solvent = std::string(detail::trim(rest.substr(in + 4)));
  }
  return out;
}

/// Bundled property table loaded from CSV
/// (`name,molecular_weight,density,state,weight_percent`).
class StaticTable final : public PropertyProvider {
 public:
  StaticTable() = default;

  void add(ChemicalProperties props) {
    auto key = detail::canonical_name(props.name);
    entries_[key] = std::move(props);
  }

  std::size_t size() const { return entries_.size(); }

  static StaticTable from_csv_text(std::string_view text) {
    StaticTable table;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (detail::trim(line).empty()) continue;
      auto cols = detail::split(line, ',');
      if (line_no == 1) {
        if (cols.size() != 5 || detail::trim(cols[0]) != "name")
          throw std::runtime_error("property table header must be name,molecular_weight,density,state,weight_percent");
        continue;
      }
      if (cols.size() != 5) throw std::runtime_error("property table line " + std::to_string(line_no) + ": 5 columns expected");
      ChemicalProperties p;
      p.name = std::string(detail::trim(cols[0]));
      auto mw = detail::parse_decimal(cols[1]);
      auto density = detail::parse_decimal(cols[2]);
      if (!mw || !density || *mw <= 0 || *density <= 0)
        throw std::runtime_error("property table line " + std::to_string(line_no) + ": bad molecular weight or density");
      p.molecular_weight = *mw;
      p.density = *density;
      auto state = detail::to_lower(detail::trim(cols[3]));
      if (state == "solid") {
        p.physical_state = PhysicalState::solid;
      } else if (state == "liquid") {
        p.physical_state = PhysicalState::liquid;
      } else {
        throw std::runtime_error("property table line " + std::to_string(line_no) + ": state must be solid or liquid");
      }
      if (!detail::trim(cols[4]).empty()) {
        auto wp = detail::parse_decimal(cols[4]);
        if (!wp || *wp <= 0 || *wp > 100)
          throw std::runtime_error("property table line " + std::to_string(line_no) + ": weight_percent out of (0,100]");
        p.weight_percent = *wp;
      }
      table.add(std::move(p));
    }
    return table;
  }

  static StaticTable from_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open property table " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_csv_text(ss.str());
  }

  /// data/chemicals.csv, or $AUTOLABS_DATA_DIR/chemicals.csv when set.
  static const StaticTable& bundled() {
    static const StaticTable table = [] {
      std::filesystem::path dir = AUTOLABS_DATA_DIR;
      if (const char* env = std::getenv("AUTOLABS_DATA_DIR")) dir = env;
      return from_csv(dir / "chemicals.csv");
    }();
    return table;
  }

  ChemicalProperties lookup(std::string_view name) const override {
    if (auto it = entries_.find(detail::canonical_name(name)); it != entries_.end()) return it->second;
    // "N% X in Y": solute X supplies the molecular weight; the solution density
    // is taken from Y when known, otherwise from X.
    if (auto pct = parse_percent_name(name)) {
      auto solute = entries_.find(detail::canonical_name(pct->solute));
      if (solute == entries_.end()) throw UnknownChemical(std::string(name));
      ChemicalProperties p = solute->second;
      p.name = std::string(detail::trim(name));
      p.weight_percent = pct->percent;
      p.physical_state = PhysicalState::liquid;
      if (!pct->solvent.empty())
        if (auto solvent = entries_.find(detail::canonical_name(pct->solvent)); solvent != entries_.end())
          p.density = solvent->second.density;
      return p;
    }
    throw UnknownChemical(std::string(name));
  }

 private:
  std::map<std::string, ChemicalProperties> entries_;
};

/// Memoises another provider so repeated lookups within a session agree.
class CachingProvider final : public PropertyProvider {
 public:
  explicit CachingProvider(const PropertyProvider& inner) : inner_(inner) {}

  ChemicalProperties lookup(std::string_view name) const override {
    auto key = detail::canonical_name(name);
    {
      std::lock_guard lock(mutex_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    auto props = inner_.lookup(name);
    std::lock_guard lock(mutex_);
    return cache_.emplace(key, std::move(props)).first->second;
  }

 private:
  const PropertyProvider& inner_;
  mutable std::mutex mutex_;
  mutable std::map<std::string, ChemicalProperties> cache_;
};

namespace detail {

inline ChemicalProperties resolve(const PropertyProvider& props, std::string_view name) {
  auto p = props.lookup(name);
  if (!(p.density > 0)) throw NonPositiveDensity("density of '" + std::string(name) + "' is not positive");
  if (!(p.molecular_weight > 0)) throw std::domain_error("molecular weight of '" + std::string(name) + "' is not positive");
  return p;
}

}  // namespace detail

/// Volume of `weight` of a chemical: mg / (g/mL) = uL.
inline Microliters get_chem_volume(const PropertyProvider& props, std::string_view name, Milligrams weight) {
  if (weight.value < 0) throw std::invalid_argument("weight must be nonnegative");
  auto p = detail::resolve(props, name);
  return {weight.value / p.density};
}

/// Volume holding `moles` of a chemical: mol * g/mol / (g/mL) = mL, reported in uL.
inline Microliters find_the_volume_corresponding_to_moles(const PropertyProvider& props, std::string_view name,
                                                          Moles moles) {
  if (moles.value < 0) throw std::invalid_argument("moles must be nonnegative");
  auto p = detail::resolve(props, name);
  double grams = moles.value * p.molecular_weight;
  return {grams / p.density * 1000.0};
}

/// Molarity of an n% (w/v) solution. Requires the weight percent to be known
/// for `name`; never assumes a neat liquid.
inline Molar find_the_concentration_of_n_percent_solution(const PropertyProvider& props, std::string_view name) {
  auto p = detail::resolve(props, name);
  if (!p.weight_percent) throw MissingWeightPercent(std::string(name));
  double mass_per_liter = 1000.0 * p.density;
  double mass_n_percent = *p.weight_percent * mass_per_liter / 100.0;
  return {mass_n_percent / p.molecular_weight};
}

struct SolutionSpec {
  Molar total_molarity;
  double molar_ratio = 1;  // [component 2] / [component 1]
  Liters volume;
};

struct ComponentAmount {
  std::string name;
  PhysicalState physical_state = PhysicalState::liquid;
  Molar molarity;
  Moles moles;
  Milligrams mass;
  Microliters volume;

  /// uL for liquids, mg for solids.
  Amount canonical() const {
    return physical_state == PhysicalState::liquid ? Amount{volume.value, Unit::uL} : Amount{mass.value, Unit::mg};
  }
};

/// Amounts of two chemicals for a solution of given total molarity, molar ratio
/// R = [chem2]/[chem1] and volume.
inline std::pair<ComponentAmount, ComponentAmount> find_chemical_amounts_in_a_solution(const PropertyProvider& props,
                                                                                      const SolutionSpec& spec,
                                                                                      std::string_view chem1,
                                                                                      std::string_view chem2) {
  if (!(spec.total_molarity.value > 0) || !(spec.molar_ratio > 0) || !(spec.volume.value > 0))
    throw std::invalid_argument("total molarity, molar ratio and volume must be positive");
  const double total = spec.total_molarity.value;
  const double r = spec.molar_ratio;
  auto component = [&](std::string_view name, double molarity) {
    auto p = detail::resolve(props, name);
    ComponentAmount c;
    c.name = std::string(name);
    c.physical_state = p.physical_state;
    c.molarity = {molarity};
    c.moles = {molarity * spec.volume.value};
    c.mass = {c.moles.value * p.molecular_weight * 1000.0};
    c.volume = {c.mass.value / p.density};
    return c;
  };
  return {component(chem1, total / (r + 1)), component(chem2, r * total / (r + 1))};
}

/// C1 V1 = C2 V2, solved for V1.
inline Microliters dilution_volume(Molar stock, Molar target, Liters final_volume) {
  if (!(stock.value > 0)) throw std::invalid_argument("stock concentration must be positive");
  if (target.value < 0 || final_volume.value < 0) throw std::invalid_argument("target and volume must be nonnegative");
  if (target.value > stock.value)
    throw ImpossibleDilution("cannot reach " + detail::format_number(target.value) + " M from a " +
                             detail::format_number(stock.value) + " M stock");
  return {target.value * final_volume.value / stock.value * 1e6};
}

/// Solvent volume left after the other components of a vial.
inline Microliters solvent_remainder(Microliters total, std::span<const double> components_uL) {
  double used = std::accumulate(components_uL.begin(), components_uL.end(), 0.0);
  if (used > total.value * (1 + 1e-12))
    throw Overfill("components take " + detail::format_number(used) + " uL of a " + detail::format_number(total.value) +
                   " uL vial");
  return {total.value - used};
}

struct StockSplit {
  Microliters stock;
  Microliters neat_solvent;
};

/// Modifier dosed from a stock of `stock_percent`: stock = (target / stock%) * total.
inline StockSplit modifier_stock_split(Microliters total, double target_percent, double stock_percent) {
  if (target_percent < 0 || !(stock_percent > 0) || total.value < 0)
    throw std::invalid_argument("percentages and total volume must be nonnegative, stock positive");
  if (target_percent > stock_percent)
    throw TargetExceedsStock("modifier target " + detail::format_number(target_percent) + "% exceeds the " +
                             detail::format_number(stock_percent) + "% stock");
  double stock = target_percent / stock_percent * total.value;
  return {{stock}, {total.value - stock}};
}

}  // namespace autolabs
