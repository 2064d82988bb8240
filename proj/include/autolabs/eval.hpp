#pragma once

// Comparison of a generated procedure against ground truth: fuzzy step matching
// by linear sum assignment, P/R/F1, Spearman over matched pairs, chemical-name
// matching and nRMSE over chemical-vial amounts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "autolabs/detail/text.hpp"
#include "autolabs/protocol.hpp"

namespace autolabs::eval {

inline constexpr double kInfinite = std::numeric_limits<double>::infinity();
inline constexpr double kMismatchCost = 1e6;   // Levenshtein beyond the budget
inline constexpr double kSentinel = 1e9;       // stands in for kInfinite inside the solver
inline constexpr std::size_t kMaxDistance = 5;

inline std::size_t levenshtein(std::string_view a, std::string_view b) {
  std::vector<std::size_t> row(b.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

/// Canonicalized Levenshtein with the 5 / 1e6 threshold.
inline double name_distance(std::string_view a, std::string_view b) {
  auto d = levenshtein(detail::canonical_name(a), detail::canonical_name(b));
  return d > kMaxDistance ? kMismatchCost : static_cast<double>(d);
}

inline double step_distance(const NormalizedStep& g, const NormalizedStep& t) {
  if (g.action != t.action || !detail::iequals(detail::trim(g.plate), detail::trim(t.plate))) return kInfinite;
  return name_distance(g.parameter, t.parameter);
}

using CostMatrix = std::vector<std::vector<double>>;

struct Pair {
  std::size_t gen = 0;
  std::size_t gt = 0;
  double cost = 0;
  bool operator==(const Pair&) const = default;
};

struct Assignment {
  std::vector<Pair> pairs;  // sorted by gen index
  std::vector<std::size_t> unmatched_gen;
  std::vector<std::size_t> unmatched_gt;
  /// Another optimum existed that the lexicographic tie-break ruled out.
  bool tie_break_applied = false;
};

namespace detail {

struct Solution {
  std::vector<int> col_of_row;
  double total = 0;
};

// Hungarian method (shortest augmenting paths with potentials) on a square matrix.
inline Solution hungarian(const std::vector<std::vector<double>>& a) {
  const int n = static_cast<int>(a.size());
  Solution s;
  s.col_of_row.assign(n, -1);
  if (n == 0) return s;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1), v(n + 1);
  std::vector<int> p(n + 1), way(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  for (int j = 1; j <= n; ++j) s.col_of_row[p[j] - 1] = j - 1;
  for (int i = 0; i < n; ++i) s.total += a[i][s.col_of_row[i]];
  return s;
}

inline double optimum_without(const std::vector<std::vector<double>>& a, const std::vector<char>& row_taken,
                              const std::vector<char>& col_taken) {
  std::vector<int> rows, cols;
  for (int i = 0; i < static_cast<int>(a.size()); ++i)
    if (!row_taken[i]) rows.push_back(i);
  for (int j = 0; j < static_cast<int>(a.size()); ++j)
    if (!col_taken[j]) cols.push_back(j);
  std::vector<std::vector<double>> sub(rows.size(), std::vector<double>(cols.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c) sub[r][c] = a[rows[r]][cols[c]];
  return hungarian(sub).total;
}

inline bool same_total(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max({1.0, std::abs(a), std::abs(b)}); }

}  // namespace detail

/// Minimum-cost partial bijection. The matrix is padded to square with zero
/// dummy costs; infinite entries become kSentinel; among optimal solutions the
/// one that is lexicographically smallest in (gen, gt) is returned; pairs
/// costing kMismatchCost or more are reported as unmatched.
inline Assignment assign(const CostMatrix& costs) {
  const std::size_t rows = costs.size();
  const std::size_t cols = rows == 0 ? 0 : costs.front().size();
  for (const auto& r : costs)
    if (r.size() != cols) throw std::invalid_argument("cost matrix must be rectangular");
  const std::size_t n = std::max(rows, cols);
  std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) a[i][j] = std::isinf(costs[i][j]) ? kSentinel : costs[i][j];

  Assignment out;
  std::vector<int> chosen(n, -1);
  std::vector<char> row_taken(n, 0), col_taken(n, 0);
  double remaining = detail::hungarian(a).total;
  double fixed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    row_taken[i] = 1;
    bool found = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (col_taken[j]) continue;
      col_taken[j] = 1;
      double rest = detail::optimum_without(a, row_taken, col_taken);
      col_taken[j] = 0;
      if (!detail::same_total(fixed + a[i][j] + rest, fixed + remaining)) continue;
      if (!found) {
        chosen[i] = static_cast<int>(j);
        found = true;
        // Keep scanning real cells only to learn whether the optimum was unique.
        if (i >= rows) break;
      } else if (j < cols || chosen[i] < static_cast<int>(cols)) {
        out.tie_break_applied = true;
        break;
      }
    }
    col_taken[chosen[i]] = 1;
    fixed += a[i][chosen[i]];
    remaining -= a[i][chosen[i]];
  }

  std::vector<char> gt_matched(cols, 0);
  for (std::size_t i = 0; i < rows; ++i) {
    auto j = static_cast<std::size_t>(chosen[i]);
    if (j < cols && costs[i][j] < kMismatchCost) {
      out.pairs.push_back({i, j, costs[i][j]});
      gt_matched[j] = 1;
    } else {
      out.unmatched_gen.push_back(i);
    }
  }
  for (std::size_t j = 0; j < cols; ++j)
    if (!gt_matched[j]) out.unmatched_gt.push_back(j);
  return out;
}

inline CostMatrix step_costs(const Procedure& gen, const Procedure& gt) {
  CostMatrix m(gen.steps.size(), std::vector<double>(gt.steps.size()));
  std::vector<NormalizedStep> g, t;
  for (const auto& s : gen.steps) g.push_back(normalize_step(s));
  for (const auto& s : gt.steps) t.push_back(normalize_step(s));
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < t.size(); ++j) m[i][j] = step_distance(g[i], t[j]);
  return m;
}

struct StepMetrics {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  Assignment assignment;
};

inline StepMetrics step_metrics(const Procedure& gen, const Procedure& gt) {
  StepMetrics m;
  m.assignment = assign(step_costs(gen, gt));
  double matched = static_cast<double>(m.assignment.pairs.size());
  m.precision = gen.steps.empty() ? 0 : matched / static_cast<double>(gen.steps.size());
  m.recall = gt.steps.empty() ? 0 : matched / static_cast<double>(gt.steps.size());
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0;
  return m;
}

/// Ranks 1..n with ties sharing their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Pearson correlation of average ranks; nullopt when undefined.
inline std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline std::optional<double> spearman_of_matched(const Assignment& a) {
  std::vector<double> g, t;
  for (const auto& p : a.pairs) {
    g.push_back(static_cast<double>(p.gen));
    t.push_back(static_cast<double>(p.gt));
  }
  return spearman(g, t);
}

/// Distinct Add-step chemical names in order of first appearance (canonical form).
inline std::vector<std::string> chemical_names(const Procedure& p) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& s : p.steps)
    if (const auto* add = std::get_if<AddStep>(&s)) {
      auto c = autolabs::detail::canonical_name(add->chemical);
      if (seen.insert(c).second) out.push_back(c);
    }
  return out;
}

using NameMapping = std::map<std::string, std::string>;  // gen canonical name -> gt canonical name

inline NameMapping match_chemicals(const std::vector<std::string>& gen_names, const std::vector<std::string>& gt_names) {
  CostMatrix m(gen_names.size(), std::vector<double>(gt_names.size()));
  for (std::size_t i = 0; i < gen_names.size(); ++i)
    for (std::size_t j = 0; j < gt_names.size(); ++j) m[i][j] = name_distance(gen_names[i], gt_names[j]);
  NameMapping mapping;
  for (const auto& p : assign(m).pairs)
    mapping[autolabs::detail::canonical_name(gen_names[p.gen])] = autolabs::detail::canonical_name(gt_names[p.gt]);
  return mapping;
}

/// "Plate 1:A1".
inline std::string vial_id(PlateId plate, VialIndex v) { return plate.str() + ":" + v.str(); }

struct AmountMatrix {
  std::map<std::string, std::map<std::string, double>> values;  // chemical -> vial -> amount

  double at(const std::string& chemical, const std::string& vial) const {
    auto c = values.find(chemical);
    if (c == values.end()) return 0;
    auto v = c->second.find(vial);
    return v == c->second.end() ? 0 : v->second;
  }
  std::set<std::string> chemicals() const {
    std::set<std::string> out;
    for (const auto& [c, _] : values) out.insert(c);
    return out;
  }
  std::set<std::string> vials() const {
    std::set<std::string> out;
    for (const auto& [_, row] : values)
      for (const auto& [v, __] : row) out.insert(v);
    return out;
  }
  AmountMatrix scaled(double c) const {
    AmountMatrix m = *this;
    for (auto& [_, row] : m.values)
      for (auto& [__, x] : row) x *= c;
    return m;
  }
};

/// Sums every Add value per chemical and plate-qualified vial. Names in
/// `mapping` are renamed to their ground-truth counterparts.
inline AmountMatrix amount_matrix(const Procedure& p, const NameMapping& mapping = {}) {
  AmountMatrix m;
  for (const auto& s : p.steps) {
    const auto* add = std::get_if<AddStep>(&s);
    if (!add) continue;
    auto name = autolabs::detail::canonical_name(add->chemical);
    if (auto it = mapping.find(name); it != mapping.end()) name = it->second;
    auto& row = m.values[name];
    for (const auto& [vial, value] : add->values) row[vial_id(add->plate, vial)] += value;
  }
  return m;
}

struct NrmseResult {
  std::optional<double> value;  // nullopt: ground-truth range is zero
  double rmse = 0;
  double range = 0;
  std::size_t observations = 0;
};

/// RMSE over the union of chemicals and vials (absent cells are zero) divided
/// by the range of the ground-truth values over the same cells.
inline NrmseResult nrmse(const AmountMatrix& gen, const AmountMatrix& gt) {
  auto chems = gen.chemicals();
  for (const auto& c : gt.chemicals()) chems.insert(c);
  auto vials = gen.vials();
  for (const auto& v : gt.vials()) vials.insert(v);
  NrmseResult r;
  double sq = 0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& c : chems)
    for (const auto& v : vials) {
      double x = gen.at(c, v), y = gt.at(c, v);
      sq += (x - y) * (x - y);
      lo = std::min(lo, y);
      hi = std::max(hi, y);
      ++r.observations;
    }
  if (r.observations == 0) return r;
  r.rmse = std::sqrt(sq / static_cast<double>(r.observations));
  r.range = hi - lo;
  if (r.range > 0) r.value = r.rmse / r.range;
  return r;
}

struct MetricsReport {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::optional<double> spearman;
  NrmseResult nrmse;
  Assignment assignment;
  NameMapping name_mapping;
  std::vector<std::string> gen_steps;  // normalized "Action|Parameter|Plate" for audit
  std::vector<std::string> gt_steps;
  std::vector<std::string> warnings;
};

inline std::string describe(const NormalizedStep& s) {
  return std::string(to_string(s.action)) + "|" + s.parameter + "|" + s.plate;
}

inline MetricsReport evaluate(const Procedure& gen, const Procedure& gt) {
  MetricsReport r;
  auto sm = step_metrics(gen, gt);
  r.precision = sm.precision;
  r.recall = sm.recall;
  r.f1 = sm.f1;
  r.assignment = std::move(sm.assignment);
  r.spearman = spearman_of_matched(r.assignment);
  r.name_mapping = match_chemicals(chemical_names(gen), chemical_names(gt));
  r.nrmse = nrmse(amount_matrix(gen, r.name_mapping), amount_matrix(gt));

  std::set<int> odd_plates;
  auto collect = [&](const Procedure& p, std::vector<std::string>& out) {
    for (const auto& s : p.steps) {
      out.push_back(describe(normalize_step(s)));
      for (auto plate : plates_of(s))
        if (plate.number != 1 && plate.number != 2) odd_plates.insert(plate.number);
    }
  };
  collect(gen, r.gen_steps);
  collect(gt, r.gt_steps);
  for (int n : odd_plates) r.warnings.push_back("Plate " + std::to_string(n) + " is outside the Plate 1/Plate 2 layout");
  if (r.assignment.tie_break_applied)
    r.warnings.push_back("several optimal step assignments exist; the lexicographically smallest was used");
  if (!r.nrmse.value && r.nrmse.observations > 0)
    r.warnings.push_back("ground-truth amounts have zero range; nRMSE undefined");
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  using nlohmann::json;
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json pairs = json::array();
  for (const auto& p : r.assignment.pairs)
    pairs.push_back({{"gen", p.gen}, {"gt", p.gt}, {"cost", p.cost}, {"gen_step", r.gen_steps.at(p.gen)},
                     {"gt_step", r.gt_steps.at(p.gt)}});
  return {
      {"precision", r.precision},
      {"recall", r.recall},
      {"f1", r.f1},
      {"spearman", opt(r.spearman)},
      {"nrmse", opt(r.nrmse.value)},
      {"rmse", r.nrmse.rmse},
      {"gt_range", r.nrmse.range},
      {"assignment",
       {{"pairs", pairs},
        {"unmatched_gen", r.assignment.unmatched_gen},
        {"unmatched_gt", r.assignment.unmatched_gt},
        {"tie_break_applied", r.assignment.tie_break_applied}}},
      {"name_mapping", r.name_mapping},
      {"warnings", r.warnings},
  };
}

inline std::string to_table(const MetricsReport& r) {
  std::ostringstream os;
  auto num = [](std::optional<double> v) {
    if (!v) return std::string("undefined");
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << *v;
    return s.str();
  };
  os << "precision  " << num(r.precision) << "\n"
     << "recall     " << num(r.recall) << "\n"
     << "f1         " << num(r.f1) << "\n"
     << "spearman   " << num(r.spearman) << "\n"
     << "nrmse      " << num(r.nrmse.value) << "\n\n";
  os << "matched steps (gen -> gt, cost)\n";
  for (const auto& p : r.assignment.pairs)
    os << "  " << p.gen + 1 << " -> " << p.gt + 1 << "  " << p.cost << "  " << r.gen_steps.at(p.gen) << "\n";
  for (auto i : r.assignment.unmatched_gen) os << "  FP " << i + 1 << "  " << r.gen_steps.at(i) << "\n";
  for (auto j : r.assignment.unmatched_gt) os << "  FN " << j + 1 << "  " << r.gt_steps.at(j) << "\n";
  if (!r.name_mapping.empty()) {
    os << "\nchemical names\n";
    for (const auto& [g, t] : r.name_mapping) os << "  " << g << " -> " << t << "\n";
  }
  for (const auto& w : r.warnings) os << "warning: " << w << "\n";
  return os.str();
}

}  // namespace autolabs::eval
