#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "varexp/error.hpp"
#include "varexp/geometry.hpp"
#include "varexp/grid.hpp"

namespace varexp {

/// Sampled variable exponent p(.). Values live on the nodes; cell-center
/// values come from the multilinear interpolant unless the field was built
/// from per-cell data, in which case the cell values are kept exactly and the
/// nodes carry the mean of their incident cells.
class ExponentField {
 public:
  ExponentField() = default;

  explicit ExponentField(GridFunction nodal, std::optional<double> p_infinity = std::nullopt)
      : field_(std::move(nodal)), p_inf_(p_infinity) {
    require(field_.codomain == 1, "exponent must be scalar");
    cells_.resize(field_.grid.cell_count());
    for (std::size_t c = 0; c < cells_.size(); ++c) cells_[c] = field_.cell_value(c);
    finish();
  }

  static ExponentField from_cells(const Grid& grid, std::vector<double> cell_values,
                                  std::optional<double> p_infinity = std::nullopt) {
    require(cell_values.size() == grid.cell_count(), "exponent cell data has wrong length");
    ExponentField p;
    p.field_ = GridFunction(grid, 1);
    p.cell_defined_ = true;
    std::vector<int> hits(grid.node_count(), 0);
    for (std::size_t c = 0; c < grid.cell_count(); ++c)
      for (int k = 0; k < grid.corner_count(); ++k) {
        const std::size_t node = grid.cell_corner(c, k);
        p.field_.values[node] += cell_values[c];
        ++hits[node];
      }
    for (std::size_t i = 0; i < hits.size(); ++i) p.field_.values[i] /= hits[i];
    p.cells_ = std::move(cell_values);
    p.p_inf_ = p_infinity;
    p.finish();
    return p;
  }

  const Grid& grid() const { return field_.grid; }
  const GridFunction& field() const { return field_; }
  double p_minus() const { return p_minus_; }
  double p_plus() const { return p_plus_; }
  const std::optional<double>& p_infinity() const { return p_inf_; }
  bool cell_defined() const { return cell_defined_; }

  /// p_infinity if set, else p at the node of largest |x| (first in node order).
  double p_infinity_or_default() const {
    if (p_inf_) return *p_inf_;
    const Grid& g = grid();
    std::size_t best = 0;
    double best_norm = -1.0;
    for (std::size_t i = 0; i < g.node_count(); ++i) {
      const double r = norm(g.node_position(i));
      if (r > best_norm) {
        best_norm = r;
        best = i;
      }
    }
    return field_.values[best];
  }

  double at_node(std::size_t node) const { return field_.values[node]; }
  double at_cell(std::size_t cell) const { return cells_[cell]; }
  const std::vector<double>& cell_values() const { return cells_; }

  /// p at an arbitrary point of the domain (points outside are clamped).
  double value_at(const Vec& x) const {
    const Grid& g = grid();
    IVec cell{0, 0, 0};
    Vec t{};
    for (int d = 0; d < g.dim(); ++d) {
      const double s = (x[d] - g.origin()[d]) / g.cell_size()[d];
      int i = static_cast<int>(std::floor(s));
      i = std::clamp(i, 0, g.cells_per_axis()[d] - 1);
      cell[d] = i;
      t[d] = std::clamp(s - i, 0.0, 1.0);
    }
    const std::size_t c = g.cell_linear(cell);
    if (cell_defined_) return cells_[c];
    double v = 0.0;
    for (int k = 0; k < g.corner_count(); ++k) {
      double w = 1.0;
      for (int d = 0; d < g.dim(); ++d) w *= ((k >> d) & 1) ? t[d] : 1.0 - t[d];
      v += w * field_.values[g.cell_corner(c, k)];
    }
    return v;
  }

 private:
  void finish() {
    p_minus_ = std::numeric_limits<double>::infinity();
    p_plus_ = -p_minus_;
    auto visit = [&](double v) {
      require(std::isfinite(v) && v >= 1.0, "exponent values must be finite and >= 1");
      p_minus_ = std::min(p_minus_, v);
      p_plus_ = std::max(p_plus_, v);
    };
    for (double v : field_.values) visit(v);
    for (double v : cells_) visit(v);
    if (p_inf_) require(std::isfinite(*p_inf_) && *p_inf_ >= 1.0, "p_infinity must be finite and >= 1");
  }

  GridFunction field_;
  std::vector<double> cells_;
  double p_minus_ = 0.0;
  double p_plus_ = 0.0;
  std::optional<double> p_inf_;
  bool cell_defined_ = false;
};

inline ExponentField constant_exponent(const Grid& grid, double p) {
  GridFunction f(grid, 1);
  std::fill(f.values.begin(), f.values.end(), p);
  return ExponentField(std::move(f), p);
}

template <class Fn>
ExponentField exponent_from(const Grid& grid, Fn&& fn, std::optional<double> p_infinity = std::nullopt) {
  return ExponentField(sample_nodes(grid, std::forward<Fn>(fn)), p_infinity);
}

/// Requires the range needed by the higher-integrability machinery.
inline void require_proper_exponent(const ExponentField& p) {
  require(p.p_minus() > 1.0, "exponent must satisfy p_minus > 1");
}

// ---------------------------------------------------------------------------
// log-Hölder diagnostics

struct VanishingEntry {
  double epsilon = 0.0;
  std::optional<double> r;  ///< largest admissible pair distance
  std::optional<double> R;  ///< smallest admissible far-field radius
};

struct LogHolderReport {
  double c_log_local = 0.0;
  std::optional<double> c_log_decay;
  double c_log = 0.0;
  double p_scale_bound = 0.0;  ///< (p+)^2 c_log, the modulus constant for p itself
  std::vector<VanishingEntry> vanishing_profile;
  double vmo_oscillation = 0.0;
  std::size_t pairs_examined = 0;
  bool subsampled = false;
};

struct PairBudget {
  std::size_t max_pairs = 2'000'000;
  std::uint64_t seed = 0x5eedULL;
};

namespace detail {

/// Visits every unordered pair (i < j) or, above the budget, a fixed-seed
/// random sample of budget pairs. Returns {pairs visited, subsampled}.
template <class Fn>
std::pair<std::size_t, bool> for_each_pair(std::size_t n, const PairBudget& budget, Fn&& fn) {
  const std::size_t total = n < 2 ? 0 : n * (n - 1) / 2;
  if (total <= budget.max_pairs) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) fn(i, j);
    return {total, false};
  }
  std::mt19937_64 rng(budget.seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t visited = 0;
  while (visited < budget.max_pairs) {
    std::size_t i = pick(rng), j = pick(rng);
    if (i == j) continue;
    if (i > j) std::swap(i, j);
    fn(i, j);
    ++visited;
  }
  return {visited, true};
}

inline double log_modulus(double dist) { return std::log(std::numbers::e + 1.0 / dist); }
inline double log_decay(double radius) { return std::log(std::numbers::e + radius); }

}  // namespace detail

/// log-Hölder constant of 1/p on a point sample.
inline LogHolderReport log_holder_constant_points(std::span<const Vec> points, std::span<const double> p,
                                                  std::optional<double> p_infinity,
                                                  const PairBudget& budget = {}) {
  require(points.size() == p.size(), "point and value counts differ");
  require(points.size() >= 2, "log-Hölder constant needs at least 2 nodes");
  LogHolderReport rep;
  double local = 0.0;
  auto [visited, sub] = detail::for_each_pair(points.size(), budget, [&](std::size_t i, std::size_t j) {
    const double d = distance(points[i], points[j]);
    if (d <= 0.0) return;
    local = std::max(local, std::abs(1.0 / p[i] - 1.0 / p[j]) * detail::log_modulus(d));
  });
  rep.pairs_examined = visited;
  rep.subsampled = sub;
  rep.c_log_local = local;
  rep.c_log = local;
  if (p_infinity) {
    double decay = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i)
      decay = std::max(decay, std::abs(1.0 / p[i] - 1.0 / *p_infinity) * detail::log_decay(norm(points[i])));
    rep.c_log_decay = decay;
    rep.c_log = std::max(local, decay);
  }
  const double p_plus = *std::max_element(p.begin(), p.end());
  rep.p_scale_bound = p_plus * p_plus * rep.c_log;
  return rep;
}

inline std::vector<Vec> node_positions(const Grid& g) {
  std::vector<Vec> pts(g.node_count());
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = g.node_position(i);
  return pts;
}

inline LogHolderReport log_holder_constant(const ExponentField& p, const PairBudget& budget = {}) {
  const auto pts = node_positions(p.grid());
  return log_holder_constant_points(pts, p.field().values, p.p_infinity(), budget);
}

/// For each epsilon, the largest pair distance r and the smallest radius R at
/// which p satisfies the vanishing log-Hölder conditions on the sampled nodes.
/// Entries are absent when even the finest sampled scale violates the bound.
inline std::vector<VanishingEntry> vanishing_profile(const ExponentField& p, std::span<const double> epsilons,
                                                     const PairBudget& budget = {}) {
  for (double e : epsilons) require(e > 0.0, "epsilons must be positive");
  const Grid& g = p.grid();
  const auto pts = node_positions(g);
  const auto& val = p.field().values;
  const double p_inf = p.p_infinity_or_default();

  struct PairData {
    double dist, excess, min_radius;
  };
  std::vector<PairData> pairs;
  detail::for_each_pair(pts.size(), budget, [&](std::size_t i, std::size_t j) {
    const double d = distance(pts[i], pts[j]);
    pairs.push_back({d, std::abs(val[i] - val[j]) * detail::log_modulus(d),
                     std::min(norm(pts[i]), norm(pts[j]))});
  });
  std::sort(pairs.begin(), pairs.end(), [](const PairData& a, const PairData& b) { return a.dist < b.dist; });

  // prefix maxima over groups of equal distance
  std::vector<double> group_dist, group_max;
  double running = 0.0;
  for (std::size_t k = 0; k < pairs.size();) {
    std::size_t e = k;
    while (e < pairs.size() && pairs[e].dist <= pairs[k].dist * (1.0 + 1e-12)) {
      running = std::max(running, pairs[e].excess);
      ++e;
    }
    group_dist.push_back(pairs[e - 1].dist);
    group_max.push_back(running);
    k = e;
  }

  std::vector<double> radii(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) radii[i] = norm(pts[i]);
  std::vector<double> sorted_radii = radii;
  std::sort(sorted_radii.begin(), sorted_radii.end());

  std::vector<VanishingEntry> out;
  for (double eps : epsilons) {
    VanishingEntry entry{eps, std::nullopt, std::nullopt};
    for (std::size_t k = 0; k < group_max.size() && group_max[k] <= eps; ++k) entry.r = group_dist[k];

    double needed = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (std::abs(val[i] - p_inf) * detail::log_decay(radii[i]) > eps) needed = std::max(needed, radii[i]);
    for (const auto& pr : pairs)
      if (pr.excess > eps) needed = std::max(needed, pr.min_radius);
    if (needed < 0.0) {
      entry.R = 0.0;
    } else {
      auto it = std::upper_bound(sorted_radii.begin(), sorted_radii.end(), needed * (1.0 + 1e-12));
      if (it != sorted_radii.end()) entry.R = *it;
    }
    out.push_back(entry);
  }
  return out;
}

// ---------------------------------------------------------------------------
// comparison exponent and oscillation

struct ComparisonExponent {
  Vec y{};
  double p_j = 0.0;
  std::size_t node = 0;
};

namespace detail {

/// Node index range (inclusive) of nodes inside the closed box along axis d.
inline bool node_range(const Grid& g, const Box& b, int d, int& first, int& last) {
  const double h = g.cell_size()[d];
  const double tol = 1e-10 * h;
  first = static_cast<int>(std::ceil((b.lo[d] - g.origin()[d] - tol) / h));
  last = static_cast<int>(std::floor((b.hi[d] - g.origin()[d] + tol) / h));
  first = std::max(first, 0);
  last = std::min(last, g.cells_per_axis()[d]);
  return first <= last;
}

template <class Fn>
bool for_each_node_in(const Grid& g, const Box& b, Fn&& fn) {
  IVec first{0, 0, 0}, last{0, 0, 0};
  for (int d = 0; d < g.dim(); ++d)
    if (!node_range(g, b, d, first[d], last[d])) return false;
  for (int i = first[0]; i <= last[0]; ++i)
    for (int j = first[1]; j <= last[1]; ++j)
      for (int k = first[2]; k <= last[2]; ++k) fn(g.node_linear({i, j, k}));
  return true;
}

}  // namespace detail

/// Node of closure(2Q ∩ domain) farthest from the origin; ties go to the
/// lexicographically smallest coordinates.
inline ComparisonExponent select_comparison_exponent(const Box& q, const ExponentField& p) {
  const Grid& g = p.grid();
  const auto clipped = intersect(q.scaled(2.0), g.domain());
  require(clipped.has_value(), "comparison cube does not meet the domain");
  ComparisonExponent best;
  double best_r2 = -1.0;
  const bool any = detail::for_each_node_in(g, *clipped, [&](std::size_t node) {
    const Vec x = g.node_position(node);
    const double r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    const double tol = 1e-12 * std::max(1.0, best_r2);
    bool take = false;
    if (r2 > best_r2 + tol) {
      take = true;
    } else if (std::abs(r2 - best_r2) <= tol) {
      take = std::lexicographical_compare(x.begin(), x.begin() + g.dim(), best.y.begin(), best.y.begin() + g.dim());
    }
    if (take) {
      best_r2 = std::max(best_r2, r2);
      best.y = x;
      best.node = node;
      best.p_j = p.at_node(node);
    }
  });
  require(any && best_r2 >= 0.0, "comparison cube contains no grid node");
  return best;
}

/// Min and max of p over region: cell values of cells meeting the region and
/// node values inside it.
inline std::pair<double, double> exponent_range(const ExponentField& p, const Box& region) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for_each_overlap(p.grid(), region, [&](std::size_t c, double) {
    lo = std::min(lo, p.at_cell(c));
    hi = std::max(hi, p.at_cell(c));
  });
  if (auto clipped = intersect(region, p.grid().domain()))
    detail::for_each_node_in(p.grid(), *clipped, [&](std::size_t n) {
      lo = std::min(lo, p.at_node(n));
      hi = std::max(hi, p.at_node(n));
    });
  require(lo <= hi, "region outside domain");
  return {lo, hi};
}

/// (mean over region of |p - p_ref|^s)^(1/s).
inline double oscillation_mean(const ExponentField& p, const Box& region, double p_ref, double s) {
  require(s >= 1.0, "oscillation exponent s must be >= 1");
  const double m = mean_cells(p.grid(), region, [&](std::size_t c) { return std::pow(std::abs(p.at_cell(c) - p_ref), s); });
  return std::pow(m, 1.0 / s);
}

inline double scale_log_factor(const Box& q) {
  const double side = q.length();
  return std::log(std::numbers::e + std::max({side, 1.0 / side, norm(q.center())}));
}

struct OscillationReport {
  double value = 0.0;        ///< (mean_Q |p - p_j|^s)^(1/s)
  ComparisonExponent comparison;
  double bound_shape = 0.0;  ///< (p+)^2 c_log / log(e + max{R, 1/R, |center|}), unit constant
  double ratio = 0.0;        ///< value / bound_shape
};

inline OscillationReport oscillation_average(const Box& q, const ExponentField& p, double s,
                                             std::optional<double> c_log = std::nullopt) {
  require(s >= 1.0, "oscillation exponent s must be >= 1");
  OscillationReport rep;
  rep.comparison = select_comparison_exponent(q, p);
  rep.value = oscillation_mean(p, q, rep.comparison.p_j, s);
  const double c = c_log ? *c_log : log_holder_constant(p).c_log;
  rep.bound_shape = p.p_plus() * p.p_plus() * c / scale_log_factor(q);
  if (rep.bound_shape > 0.0)
    rep.ratio = rep.value / rep.bound_shape;
  else
    rep.ratio = rep.value > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  return rep;
}

/// Largest scaled oscillation over a cube family:
/// (mean_{2Q} |p - p_j|^s)^(1/s) * log(e + max{1/l(Q), l(Q), |center(Q)|}),
/// the quantity whose smallness replaces a small log-Hölder constant.
inline double vmo_oscillation(const ExponentField& p, std::span<const Box> cubes, double s) {
  double worst = 0.0;
  for (const Box& q : cubes) {
    const auto cmp = select_comparison_exponent(q, p);
    const double osc = oscillation_mean(p, q.scaled(2.0), cmp.p_j, s);
    worst = std::max(worst, osc * scale_log_factor(q));
  }
  return worst;
}

}  // namespace varexp
