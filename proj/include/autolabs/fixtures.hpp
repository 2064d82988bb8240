#pragma once

// Ground-truth bundles: fixtures/<id>/{steps.txt, amounts.csv, plates.csv}.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "autolabs/detail/text.hpp"
#include "autolabs/eval.hpp"
#include "autolabs/protocol.hpp"

namespace autolabs {

struct PlateBinding {
  PlateId plate;
  double vial_volume_mL = 0;
  std::optional<double> target_volume_uL;  // expected liquid fill per vial, if any
};

struct Fixture {
  std::string id;
  std::filesystem::path dir;
  std::string steps_text;
  Procedure procedure;  // arrays bound from plates.csv
  std::vector<PlateBinding> plates;
  eval::AmountMatrix amounts;  // as tabulated, canonical chemical names

  std::map<PlateId, double> target_volumes() const {
    std::map<PlateId, double> out;
    for (const auto& b : plates)
      if (b.target_volume_uL) out[b.plate] = *b.target_volume_uL;
    return out;
  }
};

inline const std::vector<std::string>& experiment_ids() {
  static const std::vector<std::string> ids{"exp1", "exp2", "exp3", "exp4", "exp5"};
  return ids;
}

/// $AUTOLABS_FIXTURE_DIR if set, else the source tree's fixtures/.
inline std::filesystem::path fixture_root() {
  if (const char* env = std::getenv("AUTOLABS_FIXTURE_DIR")) return env;
  return AUTOLABS_FIXTURE_DIR;
}

namespace detail {

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_file(p));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    for (auto c : split(line, ',')) cells.emplace_back(trim(c));
    rows.push_back(std::move(cells));
  }
  return rows;
}

inline PlateId parse_plate_label(std::string_view s) {
  s = trim(s);
  if (!istarts_with(s, "plate")) throw std::runtime_error("bad plate label '" + std::string(s) + "'");
  auto n = parse_decimal(trim(s.substr(5)));
  if (!n || *n < 1 || *n != static_cast<int>(*n)) throw std::runtime_error("bad plate label '" + std::string(s) + "'");
  return {static_cast<int>(*n)};
}

}  // namespace detail

inline std::vector<PlateBinding> load_plates(const std::filesystem::path& path) {
  auto rows = detail::read_csv(path);
  if (rows.empty() || rows[0].size() != 3 || rows[0][0] != "plate")
    throw std::runtime_error(path.string() + ": header must be plate,vial_volume_mL,target_volume_uL");
  std::vector<PlateBinding> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() < 2) throw std::runtime_error(path.string() + ": short row");
    PlateBinding b;
    b.plate = detail::parse_plate_label(r[0]);
    auto vol = detail::parse_decimal(r[1]);
    if (!vol) throw std::runtime_error(path.string() + ": bad vial volume");
    b.vial_volume_mL = *vol;
    if (r.size() > 2 && !r[2].empty()) {
      auto t = detail::parse_decimal(r[2]);
      if (!t) throw std::runtime_error(path.string() + ": bad target volume");
      b.target_volume_uL = *t;
    }
    out.push_back(b);
  }
  return out;
}

/// amounts.csv: `vial,<chemical>...`; vial ids are "A1" (Plate 1) or "Plate N:A1".
inline eval::AmountMatrix load_amounts(const std::filesystem::path& path) {
  auto rows = detail::read_csv(path);
  if (rows.empty() || rows[0].empty() || rows[0][0] != "vial")
    throw std::runtime_error(path.string() + ": header must start with 'vial'");
  const auto& header = rows[0];
  eval::AmountMatrix m;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != header.size()) throw std::runtime_error(path.string() + ": row width differs from header");
    std::string vial;
    if (auto colon = r[0].find(':'); colon != std::string::npos)
      vial = eval::vial_id(detail::parse_plate_label(r[0].substr(0, colon)), VialIndex::parse(r[0].substr(colon + 1)));
    else
      vial = eval::vial_id(PlateId{1}, VialIndex::parse(r[0]));
    for (std::size_t c = 1; c < r.size(); ++c) {
      auto v = detail::parse_decimal(r[c]);
      if (!v) throw std::runtime_error(path.string() + ": bad amount '" + r[c] + "'");
      if (*v != 0) m.values[detail::canonical_name(header[c])][vial] = *v;
    }
  }
  return m;
}

inline Procedure bind_plates(Procedure p, const std::vector<PlateBinding>& plates) {
  for (const auto& b : plates) p.arrays[b.plate] = array_for_vial_volume(b.vial_volume_mL);
  return p;
}

inline Procedure load_procedure(const std::filesystem::path& steps_file) {
  auto text = detail::read_file(steps_file);
  auto p = extract_final_steps(text);
  if (!p) throw std::runtime_error(steps_file.string() + ": no <final-steps> block");
  return *p;
}

/// `id_or_dir` is an experiment id under fixture_root() or a bundle directory.
inline Fixture load_fixture(const std::string& id_or_dir) {
  std::filesystem::path dir = id_or_dir;
  if (!std::filesystem::is_directory(dir)) dir = fixture_root() / id_or_dir;
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("no fixture '" + id_or_dir + "'");
  Fixture f;
  f.id = dir.filename().string();
  f.dir = dir;
  f.steps_text = detail::read_file(dir / "steps.txt");
  auto p = extract_final_steps(f.steps_text);
  if (!p) throw std::runtime_error((dir / "steps.txt").string() + ": no <final-steps> block");
  if (std::filesystem::exists(dir / "plates.csv")) f.plates = load_plates(dir / "plates.csv");
  f.procedure = bind_plates(std::move(*p), f.plates);
  if (std::filesystem::exists(dir / "amounts.csv")) f.amounts = load_amounts(dir / "amounts.csv");
  return f;
}

}  // namespace autolabs
