#pragma once

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include "varexp/error.hpp"
#include "varexp/exponent.hpp"
#include "varexp/grid.hpp"
#include "varexp/operator.hpp"

namespace varexp {

struct SolveOptions {
  double tolerance = 1e-8;   ///< sup-norm of the free-node gradient
  int max_iterations = 200;  ///< Newton iterations per continuation stage
  /// Continuation in gamma; a final 0 becomes gamma_floor when p^- < 2.
  std::vector<double> gamma_schedule{1.0, 1e-1, 1e-2, 1e-4, 0.0};
  double gamma_floor = 1e-8;
  double shrink = 0.5;
  double sufficient_decrease = 1e-4;
  int max_backtracks = 60;
  double max_condition = 1e12;
  /// Tolerance used on all but the last stage.
  double stage_tolerance = 1e-6;
  FluxVariant variant = FluxVariant::squared;
};

struct SolverResult {
  GridFunction u;
  bool converged = false;
  int iterations = 0;
  std::vector<double> energy_history;
  std::vector<double> residual_history;
  std::vector<int> stage_starts;  ///< index into energy_history where each stage begins
  double residual = 0.0;
  double gamma_final = 0.0;
  int fallback_steps = 0;
};

inline void validate(const SolveOptions& o) {
  require(o.tolerance > 0.0, "solver tolerance must be positive");
  require(o.max_iterations > 0, "max_iterations must be positive");
  require(!o.gamma_schedule.empty(), "gamma schedule must not be empty");
  for (std::size_t i = 0; i < o.gamma_schedule.size(); ++i) {
    require(o.gamma_schedule[i] >= 0.0, "gamma schedule entries must be >= 0");
    if (i > 0) require(o.gamma_schedule[i] <= o.gamma_schedule[i - 1], "gamma schedule must be non-increasing");
  }
  require(o.shrink > 0.0 && o.shrink < 1.0, "line-search shrink must lie in (0,1)");
  require(o.sufficient_decrease > 0.0 && o.sufficient_decrease < 0.5, "sufficient decrease must lie in (0,1/2)");
}

/// Schedule actually used for an exponent with lower bound p_minus.
inline std::vector<double> effective_schedule(const SolveOptions& o, double p_minus) {
  std::vector<double> s = o.gamma_schedule;
  if (p_minus < 2.0)
    for (double& g : s) g = std::max(g, o.gamma_floor);
  return s;
}

namespace detail {

inline double sup_free(const std::vector<double>& g, const std::vector<int>& free_index) {
  double r = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (free_index[i] >= 0) r = std::max(r, std::abs(g[i]));
  return r;
}

}  // namespace detail

/// Damped Newton minimization of J over the dofs not flagged in fixed
/// (per node), one stage per gamma. Falls back to a diagonally scaled gradient
/// step when the factorization fails, is ill-conditioned, or does not yield a
/// descent direction.
inline SolverResult minimize(DiscreteEnergy& J, GridFunction u0, const std::vector<char>& fixed,
                             const SolveOptions& opts) {
  validate(opts);
  const Grid& g = J.grid();
  const int N = J.codomain();
  require(u0.grid == g && u0.codomain == N, "initial field does not match the energy");
  require(fixed.size() == g.node_count(), "fixed-node mask has wrong length");

  std::vector<int> free_index(J.dofs(), -1);
  int n_free = 0;
  for (std::size_t i = 0; i < g.node_count(); ++i)
    if (!fixed[i])
      for (int k = 0; k < N; ++k) free_index[i * N + k] = n_free++;

  SolverResult res;
  res.u = std::move(u0);
  std::vector<double>& u = res.u.values;
  std::vector<double> grad(J.dofs()), trial(J.dofs()), step(J.dofs()), trial_grad(J.dofs());
  const auto schedule = effective_schedule(opts, J.exponent().p_minus());

  if (n_free == 0) {
    res.converged = true;
    res.gamma_final = schedule.back();
    J.set_gamma(res.gamma_final);
    res.energy_history.push_back(J.value(u));
    return res;
  }

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  bool pattern_ready = false;
  for (std::size_t stage = 0; stage < schedule.size(); ++stage) {
    const bool last = stage + 1 == schedule.size();
    const double tol = last ? opts.tolerance : std::max(opts.tolerance, opts.stage_tolerance);
    J.set_gamma(schedule[stage]);
    res.gamma_final = schedule[stage];
    res.stage_starts.push_back(static_cast<int>(res.energy_history.size()));
    double E = J.value(u);
    J.gradient(u, grad);
    double r = detail::sup_free(grad, free_index);
    res.energy_history.push_back(E);
    res.residual_history.push_back(r);
    bool stage_done = r <= tol;
    for (int it = 0; it < opts.max_iterations && !stage_done; ++it) {
      ++res.iterations;
      // Newton direction on the free dofs
      Eigen::VectorXd rhs(n_free);
      for (std::size_t i = 0; i < grad.size(); ++i)
        if (free_index[i] >= 0) rhs[free_index[i]] = -grad[i];
      const Eigen::SparseMatrix<double> H = J.hessian(u, free_index, n_free);
      bool newton_ok = false;
      Eigen::VectorXd d;
      if (!pattern_ready) {
        ldlt.analyzePattern(H);
        pattern_ready = true;
      }
      ldlt.factorize(H);
      if (ldlt.info() == Eigen::Success) {
        const auto& D = ldlt.vectorD();
        const double dmax = D.cwiseAbs().maxCoeff();
        const double dmin = D.minCoeff();
        if (dmin > 0.0 && dmax / dmin <= opts.max_condition) {
          d = ldlt.solve(rhs);
          newton_ok = ldlt.info() == Eigen::Success && d.allFinite() && d.dot(rhs) > 0.0;
        }
      }
      if (!newton_ok) {
        ++res.fallback_steps;
        d.resize(n_free);
        for (int i = 0; i < n_free; ++i) {
          const double h = H.coeff(i, i);
          d[i] = rhs[i] / (h > 0.0 && std::isfinite(h) ? h : 1.0);
        }
      }
      std::fill(step.begin(), step.end(), 0.0);
      for (std::size_t i = 0; i < step.size(); ++i)
        if (free_index[i] >= 0) step[i] = d[free_index[i]];
      const double slope = -d.dot(rhs);  // grad . d < 0

      double t = 1.0;
      bool accepted = false;
      double E_new = E;
      // predicted decrease below the roundoff of E: Armijo cannot discriminate
      const bool roundoff = -slope <= 64.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(E));
      for (int b = 0; b <= opts.max_backtracks && !roundoff; ++b, t *= opts.shrink) {
        for (std::size_t i = 0; i < u.size(); ++i) trial[i] = u[i] + t * step[i];
        E_new = J.value(trial);
        if (std::isfinite(E_new) && E_new <= E + opts.sufficient_decrease * t * slope) {
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        // energy differences below roundoff: take the full step if it reduces the residual
        for (std::size_t i = 0; i < u.size(); ++i) trial[i] = u[i] + step[i];
        J.gradient(trial, trial_grad);
        const double r_trial = detail::sup_free(trial_grad, free_index);
        E_new = J.value(trial);
        if (!(r_trial < r) || !std::isfinite(E_new)) break;
      }
      u.swap(trial);
      E = E_new;
      J.gradient(u, grad);
      r = detail::sup_free(grad, free_index);
      res.energy_history.push_back(E);
      res.residual_history.push_back(r);
      stage_done = r <= tol;
    }
    res.residual = r;
    if (last) res.converged = stage_done;
  }
  return res;
}

/// Nodal field equal to boundary on boundary nodes and zero inside.
inline GridFunction boundary_start(const GridFunction& boundary) {
  GridFunction u(boundary.grid, boundary.codomain);
  for (std::size_t i = 0; i < u.grid.node_count(); ++i)
    if (u.grid.is_boundary_node(i))
      for (int k = 0; k < u.codomain; ++k) u(i, k) = boundary(i, k);
  return u;
}

/// Dirichlet problem for the p(x)-Laplacian system with right-hand side
/// div A(x, G): minimizes the discrete energy over fields equal to boundary
/// on the boundary nodes, starting from zero in the interior.
inline SolverResult solve_pxlaplace(const CellField& G, const ExponentField& p, const GridFunction& boundary,
                                    const Grid& grid, const SolveOptions& opts = {}) {
  require(p.grid() == grid && boundary.grid == grid, "inputs live on different grids");
  require_proper_exponent(p);
  DiscreteEnergy J(p, G.values.empty() ? nullptr : &G, {opts.gamma_schedule.front(), opts.variant},
                   boundary.codomain, grid.domain());
  return minimize(J, boundary_start(boundary), boundary_mask(grid), opts);
}

// ---------------------------------------------------------------------------
// sub-grids and the comparison problem

/// Ambient-grid nodes inside a closed box, as a grid of their own.
struct SubGrid {
  Grid grid;
  IVec first{0, 0, 0};  ///< ambient multi-index of the sub-grid's first node

  std::size_t ambient_node(const Grid& ambient, std::size_t node) const {
    IVec i = grid.node_multi(node);
    for (int d = 0; d < grid.dim(); ++d) i[d] += first[d];
    return ambient.node_linear(i);
  }
  std::size_t ambient_cell(const Grid& ambient, std::size_t cell) const {
    IVec i = grid.cell_multi(cell);
    for (int d = 0; d < grid.dim(); ++d) i[d] += first[d];
    return ambient.cell_linear(i);
  }
};

inline SubGrid sub_grid(const Grid& g, const Box& box) {
  const int n = g.dim();
  SubGrid s{g, {0, 0, 0}};
  std::vector<double> origin(n), extent(n);
  std::vector<int> cells(n);
  for (int d = 0; d < n; ++d) {
    int first = 0, last = 0;
    require(detail::node_range(g, box, d, first, last) && last - first >= 2,
            "box must contain at least two grid cells per axis");
    s.first[d] = first;
    origin[d] = g.origin()[d] + first * g.cell_size()[d];
    cells[d] = last - first;
    extent[d] = cells[d] * g.cell_size()[d];
  }
  s.grid = make_grid(n, origin, extent, cells);
  return s;
}

inline GridFunction restrict_to(const GridFunction& u, const SubGrid& s) {
  GridFunction out(s.grid, u.codomain);
  for (std::size_t i = 0; i < s.grid.node_count(); ++i) {
    const std::size_t a = s.ambient_node(u.grid, i);
    for (int k = 0; k < u.codomain; ++k) out(i, k) = u(a, k);
  }
  return out;
}

inline CellField restrict_to(const CellField& f, const SubGrid& s) {
  CellField out(s.grid, f.components);
  for (std::size_t c = 0; c < s.grid.cell_count(); ++c) {
    const std::size_t a = s.ambient_cell(f.grid, c);
    for (int k = 0; k < f.components; ++k) out(c, k) = f(a, k);
  }
  return out;
}

/// Exponent on the sub-grid with cell values copied from the ambient cells.
inline ExponentField restrict_to(const ExponentField& p, const SubGrid& s) {
  std::vector<double> cells(s.grid.cell_count());
  for (std::size_t c = 0; c < cells.size(); ++c) cells[c] = p.at_cell(s.ambient_cell(p.grid(), c));
  return ExponentField::from_cells(s.grid, std::move(cells), p.p_infinity());
}

/// p_j-harmonic comparison function on the sub-grid of closure(2 Qj): the
/// minimizer of the integral of |Dw|^p_j / p_j with w = u on its boundary.
inline SolverResult solve_comparison(const Box& qj, const GridFunction& u, double p_j, const SolveOptions& opts = {}) {
  require(std::isfinite(p_j) && p_j > 1.0, "p_j must lie in (1, inf)");
  const Box doubled = qj.scaled(2.0);
  require(u.grid.domain().contains(doubled, 1e-12 * doubled.length()), "2Qj must lie within the grid domain");
  const SubGrid s = sub_grid(u.grid, doubled);
  const GridFunction boundary = restrict_to(u, s);
  const ExponentField pj = constant_exponent(s.grid, p_j);
  DiscreteEnergy J(pj, nullptr, {opts.gamma_schedule.front(), opts.variant}, u.codomain, s.grid.domain());
  GridFunction start = boundary_start(boundary);
  return minimize(J, std::move(start), boundary_mask(s.grid), opts);
}

/// Mean over the sub-grid of 2Qj of (A(x,Du) - A(x,Dw)) : (Du - Dw).
inline double comparison_distance(const GridFunction& u, const GridFunction& w, const Box& qj,
                                  const ExponentField& p, const FluxParams& fp) {
  require(u.grid == p.grid(), "u and p live on different grids");
  const SubGrid s = sub_grid(u.grid, qj.scaled(2.0));
  require(w.grid == s.grid && w.codomain == u.codomain, "w must live on the sub-grid of 2Qj");
  const CellField du = gradient(restrict_to(u, s));
  const CellField dw = gradient(w);
  const int m = du.components;
  std::vector<double> au(m), aw(m);
  double total = 0.0;
  for (std::size_t c = 0; c < s.grid.cell_count(); ++c) {
    const double pc = p.at_cell(s.ambient_cell(u.grid, c));
    flux(du.at(c), pc, fp, au);
    flux(dw.at(c), pc, fp, aw);
    double acc = 0.0;
    for (int i = 0; i < m; ++i) acc += (au[i] - aw[i]) * (du(c, i) - dw(c, i));
    total += acc;
  }
  return total / static_cast<double>(s.grid.cell_count());
}

struct UhlenbeckReport {
  double sup = 0.0;        ///< max of |Dw| over cells centered in (3/2) Qj
  double mean_term = 0.0;  ///< (mean over 2Qj of |Dw|^p_j)^(1/p_j)
  double ratio = 0.0;
};

inline UhlenbeckReport uhlenbeck_check(const SolverResult& w, const Box& qj, double p_j) {
  const Grid& g = w.u.grid;
  const CellField dw = gradient(w.u);
  const Box inner = qj.scaled(1.5);
  UhlenbeckReport rep;
  bool any = false;
  for (std::size_t c = 0; c < g.cell_count(); ++c)
    if (inner.contains(g.cell_center(c), 1e-12 * inner.length())) {
      rep.sup = std::max(rep.sup, dw.magnitude(c));
      any = true;
    }
  require(any, "no grid cell centered in (3/2) Qj");
  rep.mean_term = std::pow(mean_cells(g, g.domain(), [&](std::size_t c) { return std::pow(dw.magnitude(c), p_j); }),
                           1.0 / p_j);
  rep.ratio = rep.mean_term > 0.0 ? rep.sup / rep.mean_term : (rep.sup > 0.0 ? std::numeric_limits<double>::infinity() : 1.0);
  return rep;
}

// ---------------------------------------------------------------------------
// manufactured instances

enum class InstanceKind { matched, linear, bump };

struct Instance {
  std::optional<GridFunction> u_star;
  CellField G;
  GridFunction boundary;
};

/// Product of sin(k pi xhat_d) over axes with xhat the position normalized to
/// [0,1] across the domain, and its gradient.
inline double sine_product(const Grid& g, const Vec& x, double k) {
  double v = 1.0;
  for (int d = 0; d < g.dim(); ++d) v *= std::sin(k * std::numbers::pi * (x[d] - g.origin()[d]) / g.extent()[d]);
  return v;
}

inline Vec sine_product_gradient(const Grid& g, const Vec& x, double k) {
  Vec grad{};
  for (int d = 0; d < g.dim(); ++d) {
    double v = 1.0;
    for (int e = 0; e < g.dim(); ++e) {
      const double w = k * std::numbers::pi / g.extent()[e];
      const double arg = w * (x[e] - g.origin()[e]);
      v *= e == d ? w * std::cos(arg) : std::sin(arg);
    }
    grad[d] = v;
  }
  return grad;
}

struct InstanceShape {
  double frequency = 1.0;  ///< sine frequency (matched)
  double amplitude = 1.0;  ///< scale of u* (matched, linear) or of the bump
  double width = 0.15;     ///< bump standard deviation relative to the shortest side
};

/// matched: u* = amplitude * product of sin(frequency pi xhat_d), G the exact
/// gradient of u* at cell centers, boundary = u*. linear (p = 2 only): u* a
/// three-term sine series with its exact gradient. bump: G a Gaussian bump
/// along the first axis centered in the domain, zero boundary.
inline Instance manufactured_instance(InstanceKind kind, const Grid& grid, const ExponentField& p,
                                      const InstanceShape& shape = {}) {
  require(shape.frequency > 0.0 && shape.width > 0.0, "frequency and width must be positive");
  const double frequency = shape.frequency;
  require(p.grid() == grid, "exponent lives on a different grid");
  const int n = grid.dim();
  Instance inst;
  inst.G = CellField(grid, n);
  inst.boundary = GridFunction(grid, 1);
  std::vector<double> weights;
  switch (kind) {
    case InstanceKind::matched:
      weights = {shape.amplitude};
      break;
    case InstanceKind::linear:
      require(p.p_minus() == 2.0 && p.p_plus() == 2.0, "linear instance requires p = 2");
      weights = {shape.amplitude, shape.amplitude / 4.0, shape.amplitude / 9.0};
      break;
    case InstanceKind::bump: {
      const Vec c = grid.domain().center();
      double len = grid.extent()[0];
      for (int d = 1; d < n; ++d) len = std::min(len, grid.extent()[d]);
      const double sigma = shape.width * len;
      for (std::size_t cell = 0; cell < grid.cell_count(); ++cell) {
        const double r = distance(grid.cell_center(cell), c);
        inst.G(cell, 0) = shape.amplitude * std::exp(-0.5 * r * r / (sigma * sigma));
      }
      return inst;
    }
  }
  GridFunction u(grid, 1);
  for (std::size_t i = 0; i < grid.node_count(); ++i) {
    const Vec x = grid.node_position(i);
    for (std::size_t k = 0; k < weights.size(); ++k) u(i) += weights[k] * sine_product(grid, x, frequency * (k + 1.0));
  }
  for (std::size_t cell = 0; cell < grid.cell_count(); ++cell) {
    const Vec x = grid.cell_center(cell);
    for (std::size_t k = 0; k < weights.size(); ++k) {
      const Vec gr = sine_product_gradient(grid, x, frequency * (k + 1.0));
      for (int d = 0; d < n; ++d) inst.G(cell, d) += weights[k] * gr[d];
    }
  }
  inst.boundary = u;
  inst.u_star = std::move(u);
  return inst;
}

}  // namespace varexp
