#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "varexp/error.hpp"
#include "varexp/geometry.hpp"
#include "varexp/grid.hpp"
#include "varexp/parallel.hpp"

namespace varexp {

/// A root-dyadic sub-cube: the image of a standard dyadic cube of the given
/// level under the affine map taking (0,1)^n onto the root.
struct DyadicCube {
  Box root;
  int level = 0;
  IVec index{0, 0, 0};

  Box box() const {
    Box b{root.dim, {}, {}};
    const double scale = std::ldexp(1.0, -level);
    for (int d = 0; d < root.dim; ++d) {
      const double side = root.side(d) * scale;
      b.lo[d] = root.lo[d] + index[d] * side;
      b.hi[d] = b.lo[d] + side;
    }
    return b;
  }

  friend bool operator==(const DyadicCube&, const DyadicCube&) = default;
};

inline std::size_t cubes_per_level(int dim, int level) { return std::size_t{1} << (dim * level); }

inline std::size_t cube_linear(const DyadicCube& q) {
  const std::size_t k = std::size_t{1} << q.level;
  std::size_t idx = 0;
  for (int d = 0; d < q.root.dim; ++d) idx = idx * k + static_cast<std::size_t>(q.index[d]);
  return idx;
}

inline DyadicCube cube_from_linear(const Box& root, int level, std::size_t idx) {
  DyadicCube q{root, level, {0, 0, 0}};
  const std::size_t k = std::size_t{1} << level;
  for (int d = root.dim - 1; d >= 0; --d) {
    q.index[d] = static_cast<int>(idx % k);
    idx /= k;
  }
  return q;
}

/// All root-dyadic sub-cubes of levels 0..max_level, coarse to fine.
inline std::vector<DyadicCube> dyadic_lattice(const Box& root, int max_level) {
  require(max_level >= 0, "max_level must be non-negative");
  require(max_level * root.dim < 60, "lattice too deep");
  std::vector<DyadicCube> out;
  for (int level = 0; level <= max_level; ++level)
    for (std::size_t i = 0; i < cubes_per_level(root.dim, level); ++i) out.push_back(cube_from_linear(root, level, i));
  return out;
}

inline DyadicCube predecessor(const DyadicCube& q) {
  require(q.level >= 1, "the root cube has no predecessor in the lattice");
  DyadicCube p = q;
  p.level -= 1;
  for (int d = 0; d < q.root.dim; ++d) p.index[d] = q.index[d] / 2;
  return p;
}

inline std::vector<DyadicCube> children(const DyadicCube& q) {
  std::vector<DyadicCube> out;
  const int n = q.root.dim;
  for (int k = 0; k < (1 << n); ++k) {
    DyadicCube c{q.root, q.level + 1, {0, 0, 0}};
    for (int d = 0; d < n; ++d) c.index[d] = 2 * q.index[d] + ((k >> (n - 1 - d)) & 1);
    out.push_back(c);
  }
  return out;
}

/// Deepest level whose cubes still span at least two cells per axis.
inline int default_max_level(const Grid& g, const Box& root) {
  int level = 0;
  while (level < 30) {
    bool ok = true;
    for (int d = 0; d < g.dim(); ++d)
      if (root.side(d) * std::ldexp(1.0, -(level + 1)) < 2.0 * g.cell_size()[d] * (1.0 - 1e-12)) ok = false;
    if (!ok) break;
    ++level;
  }
  return level;
}

/// True when 2*root leaves the grid domain, i.e. averages are clipped.
inline bool doubled_root_clipped(const Grid& g, const Box& root) {
  return !g.domain().contains(root.scaled(2.0), 1e-12 * root.length());
}

/// Cached (mean over 2Q of |f|^s) for every lattice cube, the building block
/// of the localized maximal operator.
class LatticeAverages {
 public:
  LatticeAverages(const CellField& f, const Box& root, double s, int max_level)
      : grid_(f.grid), root_(root), s_(s), max_level_(max_level) {
    require(s >= 1.0, "maximal-function exponent s must be >= 1");
    require(max_level >= 0, "max_level must be non-negative");
    require(root.dim == f.grid.dim(), "root dimension mismatch");
    require(root.volume() > 0.0, "root cube must have positive volume");
    clipped_ = doubled_root_clipped(f.grid, root);
    std::vector<double> powered(f.grid.cell_count());
    for (std::size_t c = 0; c < powered.size(); ++c) {
      const double v = f.magnitude(c);
      powered[c] = s == 1.0 ? v : std::pow(v, s);
    }
    avg_.resize(max_level + 1);
    for (int level = 0; level <= max_level; ++level) {
      auto& lv = avg_[level];
      lv.resize(cubes_per_level(root.dim, level));
      parallel_for(lv.size(), [&](std::size_t i) {
        const Box b = cube_from_linear(root, level, i).box().scaled(2.0);
        lv[i] = mean_cells(grid_, b, [&](std::size_t c) { return powered[c]; });
      });
    }
  }

  const Grid& grid() const { return grid_; }
  const Box& root() const { return root_; }
  double s() const { return s_; }
  int max_level() const { return max_level_; }
  bool clipped() const { return clipped_; }

  /// mean over 2Q of |f|^s.
  double power_mean(const DyadicCube& q) const { return avg_[q.level][cube_linear(q)]; }
  /// (mean over 2Q of |f|^s)^(1/s).
  double mean(const DyadicCube& q) const {
    const double m = power_mean(q);
    return s_ == 1.0 ? m : std::pow(m, 1.0 / s_);
  }

  /// Calls fn(cube) for each lattice cube whose closure contains x.
  template <class Fn>
  void for_each_containing(const Vec& x, Fn&& fn) const {
    const int n = root_.dim;
    if (!root_.contains(x, 1e-10 * root_.length())) return;
    for (int level = 0; level <= max_level_; ++level) {
      const double k = std::ldexp(1.0, level);
      std::array<std::array<int, 2>, kMaxDim> cand{};
      std::array<int, kMaxDim> count{1, 1, 1};
      for (int d = 0; d < n; ++d) {
        const double t = (x[d] - root_.lo[d]) / root_.side(d) * k;
        const double r = std::round(t);
        if (std::abs(t - r) <= 1e-10 * std::max(1.0, k)) {
          int c = 0;
          if (r - 1 >= 0 && r - 1 < k) cand[d][c++] = static_cast<int>(r) - 1;
          if (r >= 0 && r < k) cand[d][c++] = static_cast<int>(r);
          count[d] = c;
        } else {
          cand[d][0] = std::clamp(static_cast<int>(std::floor(t)), 0, static_cast<int>(k) - 1);
          count[d] = 1;
        }
        if (count[d] == 0) return;
      }
      for (int a = 0; a < count[0]; ++a)
        for (int b = 0; b < count[1]; ++b)
          for (int c = 0; c < count[2]; ++c) {
            DyadicCube q{root_, level, {cand[0][a], cand[1][b], cand[2][c]}};
            fn(q);
          }
    }
  }

  /// (M*_{root,s} f) at every cell center; zero outside the root.
  CellField maximal() const {
    CellField out(grid_, 1);
    parallel_for(grid_.cell_count(), [&](std::size_t cell) {
      double best = 0.0;
      for_each_containing(grid_.cell_center(cell), [&](const DyadicCube& q) { best = std::max(best, power_mean(q)); });
      out.values[cell] = s_ == 1.0 ? best : std::pow(best, 1.0 / s_);
    });
    return out;
  }

 private:
  Grid grid_;
  Box root_;
  double s_;
  int max_level_;
  bool clipped_ = false;
  std::vector<std::vector<double>> avg_;
};

/// Localized dyadic maximal function
///   (M*_{root,s} f)(x) = sup over lattice cubes Q with x in closure(Q) of
///   (mean over 2Q of |f|^s)^(1/s),
/// with the supremum over the lattice truncated at max_level.
inline CellField maximal_function(const CellField& f, const Box& root, double s, int max_level) {
  return LatticeAverages(f, root, s, max_level).maximal();
}

// ---------------------------------------------------------------------------
// Calderón-Zygmund covering

struct CoverDiagnostics {
  bool disjoint = true;
  bool covers = true;
  bool sandwich = true;
  bool proper = true;
  std::size_t uncovered_cells = 0;
};

struct CZCover {
  double lambda = 0.0;
  double lambda0 = 0.0;
  std::vector<DyadicCube> cubes;
  std::vector<double> means;  ///< mean over 2Q_j of F
  int max_level = 0;
  bool clipped = false;
  CoverDiagnostics checks;
};

inline bool interiors_overlap(const Box& a, const Box& b) {
  for (int d = 0; d < a.dim; ++d) {
    const double tol = 1e-12 * std::max(a.side(d), b.side(d));
    if (std::min(a.hi[d], b.hi[d]) - std::max(a.lo[d], b.lo[d]) <= tol) return false;
  }
  return true;
}

/// lambda0 = mean over 2*root of F.
inline double covering_threshold(const CellField& f, const Box& root) {
  return mean_cells(f.grid, root.scaled(2.0), [&](std::size_t c) { return f.magnitude(c); });
}

/// Maximal lattice cubes Q_j with mean_{2Q_j} F > lambda, by a top-down walk
/// (children visited in index order). Diagnostics record disjointness,
/// coverage of {M* F > lambda}, the sandwich lambda < mean <= 2^n lambda and
/// properness.
inline CZCover cz_cover(const LatticeAverages& avg, double lambda, double lambda0) {
  if (lambda < lambda0) throw Error("below covering threshold");
  CZCover cover;
  cover.lambda = lambda;
  cover.lambda0 = lambda0;
  cover.max_level = avg.max_level();
  cover.clipped = avg.clipped();
  const Box& root = avg.root();
  const int n = root.dim;

  std::vector<DyadicCube> stack{DyadicCube{root, 0, {0, 0, 0}}};
  while (!stack.empty()) {
    const DyadicCube q = stack.back();
    stack.pop_back();
    const double m = avg.mean(q);
    if (m > lambda) {
      cover.cubes.push_back(q);
      cover.means.push_back(m);
      continue;
    }
    if (q.level < avg.max_level()) {
      auto kids = children(q);
      for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack.push_back(*it);
    }
  }

  auto& chk = cover.checks;
  const double upper = std::ldexp(lambda, n);
  for (std::size_t j = 0; j < cover.cubes.size(); ++j) {
    if (cover.cubes[j].level < 1) chk.proper = false;
    if (!(cover.means[j] > lambda && cover.means[j] <= upper * (1.0 + 1e-12))) chk.sandwich = false;
    for (std::size_t k = j + 1; k < cover.cubes.size(); ++k)
      if (interiors_overlap(cover.cubes[j].box(), cover.cubes[k].box())) chk.disjoint = false;
  }
  const CellField mstar = avg.maximal();
  const Grid& g = avg.grid();
  for (std::size_t cell = 0; cell < g.cell_count(); ++cell) {
    if (!(mstar.values[cell] > lambda)) continue;
    const Vec x = g.cell_center(cell);
    bool hit = false;
    for (const auto& q : cover.cubes)
      if (q.box().contains(x, 1e-10 * q.box().length())) {
        hit = true;
        break;
      }
    if (!hit) ++chk.uncovered_cells;
  }
  chk.covers = chk.uncovered_cells == 0;
  return cover;
}

inline CZCover cz_cover(const CellField& f, const Box& root, double lambda, double lambda0, int max_level) {
  return cz_cover(LatticeAverages(f, root, 1.0, max_level), lambda, lambda0);
}

// ---------------------------------------------------------------------------
// level sets and good-lambda measurement

struct LevelSets {
  double kappa = 0.0;
  double epsilon = 0.0;
  double lambda = 0.0;
  std::vector<char> O_lambda;
  std::vector<char> U_lambda;
};

/// Maximal functions feeding the level sets: M*_root F and M*_{m0,root} Gh.
struct LevelSetInputs {
  CellField mF;
  CellField mGh;
};

inline LevelSetInputs level_set_inputs(const CellField& F, const CellField& Gh, const Box& root, double m0,
                                       int max_level) {
  return {maximal_function(F, root, 1.0, max_level), maximal_function(Gh, root, m0, max_level)};
}

inline LevelSets level_sets(const LevelSetInputs& in, double lambda, double kappa, double epsilon) {
  require(lambda > 0.0, "lambda must be positive");
  LevelSets ls{kappa, epsilon, lambda, {}, {}};
  const std::size_t n = in.mF.values.size();
  ls.O_lambda.assign(n, 0);
  ls.U_lambda.assign(n, 0);
  for (std::size_t c = 0; c < n; ++c) {
    ls.O_lambda[c] = in.mF.values[c] > lambda;
    ls.U_lambda[c] = in.mF.values[c] > kappa * lambda && in.mGh.values[c] <= epsilon * lambda;
  }
  return ls;
}

/// O = {M* F > lambda}, U = {M* F > kappa lambda} ∩ {M*_{m0} Gh <= epsilon lambda}
/// as cell masks (a cell belongs to a set when its center does).
inline LevelSets level_sets(const CellField& F, const CellField& Gh, double lambda, double kappa, double epsilon,
                            double m0, const Box& root, int max_level) {
  return level_sets(level_set_inputs(F, Gh, root, m0, max_level), lambda, kappa, epsilon);
}

struct GoodLambdaRow {
  double epsilon = 0.0;
  double lambda = 0.0;
  double measure_U = 0.0;
  double measure_O = 0.0;
  double ratio = 0.0;  ///< |U| / |O|, 0 when O is empty
};

struct GoodLambdaCubeRow {
  double epsilon = 0.0;
  double lambda = 0.0;
  DyadicCube cube;
  double fraction = 0.0;  ///< |Q_j ∩ U| / |Q_j|
};

struct GoodLambdaTable {
  double lambda0 = 0.0;
  double kappa = 0.0;
  std::vector<GoodLambdaRow> rows;
  std::vector<GoodLambdaCubeRow> per_cube;

  /// max over lambda of the ratio for a given epsilon (the measured delta).
  double delta(double epsilon) const {
    double d = 0.0;
    for (const auto& r : rows)
      if (r.epsilon == epsilon) d = std::max(d, r.ratio);
    return d;
  }
};

/// Measured redistribution ratios |U| / |O_lambda| and the per-cube fractions
/// over the Calderón-Zygmund cover of each lambda.
inline GoodLambdaTable good_lambda_measure(const CellField& F, const CellField& Gh, const Box& root, double kappa,
                                           std::span<const double> epsilons, std::span<const double> lambdas,
                                           double m0, int max_level) {
  const int n = root.dim;
  require(kappa >= std::ldexp(1.0, n), "kappa must be at least 2^n");
  GoodLambdaTable table;
  table.kappa = kappa;
  table.lambda0 = covering_threshold(F, root);
  for (double l : lambdas)
    if (l < table.lambda0) throw Error("below covering threshold");

  const LatticeAverages avgF(F, root, 1.0, max_level);
  const LevelSetInputs in{avgF.maximal(), maximal_function(Gh, root, m0, max_level)};
  const Grid& g = F.grid;
  for (double lambda : lambdas) {
    const CZCover cover = cz_cover(avgF, lambda, table.lambda0);
    for (double eps : epsilons) {
      const LevelSets ls = level_sets(in, lambda, kappa, eps);
      GoodLambdaRow row{eps, lambda, masked_measure(g, ls.U_lambda, root), masked_measure(g, ls.O_lambda, root), 0.0};
      row.ratio = row.measure_O > 0.0 ? row.measure_U / row.measure_O : 0.0;
      table.rows.push_back(row);
      for (const auto& q : cover.cubes) {
        const Box b = q.box();
        double inside = 0.0;
        for_each_overlap(g, b, [&](std::size_t c, double) {
          if (ls.U_lambda[c] && b.contains(g.cell_center(c))) inside += g.cell_volume();
        });
        table.per_cube.push_back({eps, lambda, q, inside / b.volume()});
      }
    }
  }
  return table;
}

/// Geometric lambda sweep of `count` points from lo to hi.
inline std::vector<double> geometric_sweep(double lo, double hi, int count) {
  require(lo > 0.0 && hi > lo && count >= 2, "invalid sweep range");
  std::vector<double> out(count);
  const double r = std::log(hi / lo) / (count - 1);
  for (int k = 0; k < count; ++k) out[k] = lo * std::exp(r * k);
  out.back() = hi;
  return out;
}

}  // namespace varexp
