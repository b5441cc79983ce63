#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "varexp/dyadic.hpp"
#include "varexp/error.hpp"
#include "varexp/exponent.hpp"
#include "varexp/grid.hpp"
#include "varexp/operator.hpp"
#include "varexp/record.hpp"
#include "varexp/solver.hpp"
#include "varexp/varlp.hpp"

namespace varexp {

/// Per-cell |Du|^p(x).
inline CellField energy_density(const GridFunction& u, const ExponentField& p) {
  require(u.grid == p.grid(), "u and p live on different grids");
  const CellField du = gradient(u);
  CellField f(u.grid, 1);
  for (std::size_t c = 0; c < f.values.size(); ++c) f.values[c] = std::pow(du.magnitude(c), p.at_cell(c));
  return f;
}

/// Per-cell |G|^p(x) + h(x) with h = (e + |x|)^(-m).
inline CellField data_density(const CellField& G, const ExponentField& p, double m) {
  const Grid& g = p.grid();
  CellField f(g, 1);
  for (std::size_t c = 0; c < f.values.size(); ++c) {
    const double gp = G.values.empty() ? 0.0 : std::pow(G.magnitude(c), p.at_cell(c));
    f.values[c] = gp + decay_value(g.cell_center(c), m);
  }
  return f;
}

namespace detail {

inline void require_doubled_inside(const Grid& g, const Box& q) {
  const Box d = q.scaled(2.0);
  require(g.domain().contains(d, 1e-12 * d.length()), "2Q lies outside the data domain");
}

inline double g_power(const CellField& G, std::size_t c, double p) {
  return G.values.empty() ? 0.0 : std::pow(G.magnitude(c), p);
}

}  // namespace detail

/// Integral over Q of |Du|^p against the integrals over 2Q of
/// |(u - <u>_2Q) / R|^p and |G|^p, with R the side of Q.
inline EstimateRecord caccioppoli_check(const GridFunction& u, const CellField& G, const ExponentField& p,
                                        const Box& q) {
  const Grid& g = u.grid;
  require(g == p.grid(), "u and p live on different grids");
  detail::require_doubled_inside(g, q);
  const Box q2 = q.scaled(2.0);
  const CellField du = gradient(u);
  const double side = q.length();
  std::vector<double> avg(u.codomain);
  for (int k = 0; k < u.codomain; ++k) avg[k] = mean_cells(g, q2, [&](std::size_t c) { return u.cell_value(c, k); });

  EstimateRecord r = make_record("caccioppoli", q, g);
  r.lhs = integrate_cells(g, q, [&](std::size_t c) { return std::pow(du.magnitude(c), p.at_cell(c)); });
  r.rhs_components.emplace_back("oscillation", integrate_cells(g, q2, [&](std::size_t c) {
                                  double s = 0.0;
                                  for (int k = 0; k < u.codomain; ++k) {
                                    const double d = u.cell_value(c, k) - avg[k];
                                    s += d * d;
                                  }
                                  return std::pow(std::sqrt(s) / side, p.at_cell(c));
                                }));
  r.rhs_components.emplace_back("data", integrate_cells(g, q2, [&](std::size_t c) {
                                  return detail::g_power(G, c, p.at_cell(c));
                                }));
  r.finalize();
  return r;
}

/// Mean over Q of |Du|^p against (mean_2Q |Du|^(p/s))^s, mean_2Q |G|^p and
/// mean_2Q h.
inline EstimateRecord reverse_holder_check(const GridFunction& u, const CellField& G, const ExponentField& p,
                                           const Box& q, double s, double m = 0.0) {
  const Grid& g = u.grid;
  require(g == p.grid(), "u and p live on different grids");
  if (m == 0.0) m = 2.0 * g.dim();
  const double sobolev =
      g.dim() == 1 ? std::numeric_limits<double>::infinity() : static_cast<double>(g.dim()) / (g.dim() - 1);
  detail::require_doubled_inside(g, q);
  const Box q2 = q.scaled(2.0);
  const double pm = exponent_range(p, q2).first;
  require(s >= 1.0 && s < std::min(pm, sobolev), "s out of range for the reverse Hölder estimate");
  const CellField du = gradient(u);

  EstimateRecord r = make_record("reverse_holder", q, g);
  r.lhs = mean_cells(g, q, [&](std::size_t c) { return std::pow(du.magnitude(c), p.at_cell(c)); });
  r.rhs_components.emplace_back(
      "gradient", std::pow(mean_cells(g, q2, [&](std::size_t c) { return std::pow(du.magnitude(c), p.at_cell(c) / s); }),
                           s));
  r.rhs_components.emplace_back("data",
                                mean_cells(g, q2, [&](std::size_t c) { return detail::g_power(G, c, p.at_cell(c)); }));
  r.rhs_components.emplace_back("weight",
                                mean_cells(g, q2, [&](std::size_t c) { return decay_value(g.cell_center(c), m); }));
  r.extras.emplace_back("s", s);
  r.finalize();
  return r;
}

// ---------------------------------------------------------------------------
// Gehring

struct GehringRow {
  double mu = 1.0;
  double lhs = 0.0;
  double rhs = 0.0;
  double constant = 0.0;  ///< worst cube
  Box cube;               ///< the worst cube
};

struct GehringResult {
  double m0 = 1.0;
  double m1 = 1.0;
  double sigma = 1.0;
  double cap = 1e3;
  std::vector<double> mu_grid;
  std::vector<GehringRow> ratio_table;
};

/// Lattice cubes of root (levels >= 1) whose double lies in root.
inline std::vector<Box> gehring_cubes(const Grid& g, const Box& root, int max_level) {
  std::vector<Box> out;
  for (const auto& q : dyadic_lattice(root, max_level)) {
    if (q.level == 0) continue;
    const Box b = q.box();
    if (root.contains(b.scaled(2.0), 1e-12 * root.length())) out.push_back(b);
  }
  (void)g;
  return out;
}

/// For each mu on a uniform grid in [1, mu_max] the worst-cube constant of
///   (mean_Q F^mu)^(1/mu) <= c mean_2Q F + c (mean_2Q |G|^(p mu) + mean_2Q h^mu)^(1/mu)
/// with F = |Du|^p. m0 is the largest mu up to which every constant stays
/// within cap; sigma = min(m0, m1)^(1/4) with m1 = m0 unless configured.
inline GehringResult gehring_scan(const GridFunction& u, const CellField& G, const ExponentField& p, const Box& root,
                                  double mu_max, int steps, double cap = 1e3, std::optional<double> m1 = std::nullopt,
                                  double m = 0.0, int max_level = -1) {
  const Grid& g = u.grid;
  require(g == p.grid(), "u and p live on different grids");
  require(mu_max > 1.0 && steps >= 1, "mu grid must extend beyond 1");
  require(g.domain().contains(root, 1e-12 * root.length()), "root must lie in the grid domain");
  if (m == 0.0) m = 2.0 * g.dim();
  if (max_level < 0) max_level = std::max(1, default_max_level(g, root));
  const auto cubes = gehring_cubes(g, root, max_level);
  require(!cubes.empty(), "no lattice cube Q with 2Q inside the root");
  const CellField F = energy_density(u, p);

  GehringResult res;
  res.cap = cap;
  for (int k = 0; k <= steps; ++k) res.mu_grid.push_back(1.0 + (mu_max - 1.0) * k / steps);

  // cube-wise first rhs term does not depend on mu
  std::vector<double> first(cubes.size());
  for (std::size_t j = 0; j < cubes.size(); ++j)
    first[j] = mean_cells(g, cubes[j].scaled(2.0), [&](std::size_t c) { return F.values[c]; });

  bool prefix_ok = true;
  for (double mu : res.mu_grid) {
    GehringRow row{mu, 0.0, 0.0, -1.0, {}};
    std::vector<GehringRow> per(cubes.size());
    parallel_for(cubes.size(), [&](std::size_t j) {
      const Box& q = cubes[j];
      const Box q2 = q.scaled(2.0);
      const double lhs =
          std::pow(mean_cells(g, q, [&](std::size_t c) { return std::pow(F.values[c], mu); }), 1.0 / mu);
      const double data = mean_cells(g, q2, [&](std::size_t c) {
        return detail::g_power(G, c, p.at_cell(c) * mu) + std::pow(decay_value(g.cell_center(c), m), mu);
      });
      const double rhs = first[j] + std::pow(data, 1.0 / mu);
      per[j] = {mu, lhs, rhs, rhs > 0.0 ? lhs / rhs : (lhs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0), q};
    });
    for (const auto& pr : per)
      if (pr.constant > row.constant) row = pr;
    res.ratio_table.push_back(row);
    if (prefix_ok && row.constant <= cap)
      res.m0 = mu;
    else
      prefix_ok = false;
  }
  res.m1 = m1.value_or(res.m0);
  res.sigma = std::pow(std::min(res.m0, res.m1), 0.25);
  return res;
}

// ---------------------------------------------------------------------------
// comparison measurements

/// The three integrability quantities on 2Qj,
///   (mean |Du|^(sigma^3 p_j))^(1/sigma^3), (mean |Dw|^(sigma^3 p_j))^(1/sigma^3),
///   (mean |Dw|^(sigma^2 p))^(1/sigma^2),
/// and their ratios to lambda. lhs is the largest quantity, rhs is lambda.
inline EstimateRecord integrability_triplet(const GridFunction& u, const GridFunction& w, const Box& qj,
                                            const ExponentField& p, double p_j, double sigma, double lambda) {
  require(u.grid == p.grid(), "u and p live on different grids");
  require(sigma >= 1.0 && lambda > 0.0, "sigma must be >= 1 and lambda positive");
  const SubGrid s = sub_grid(u.grid, qj.scaled(2.0));
  require(w.grid == s.grid, "w must live on the sub-grid of 2Qj");
  const CellField du = gradient(restrict_to(u, s));
  const CellField dw = gradient(w);
  const Grid& g = s.grid;
  const double s3 = sigma * sigma * sigma;
  const double s2 = sigma * sigma;
  auto avg = [&](auto fn) { return mean_cells(g, g.domain(), fn); };
  const double a = std::pow(avg([&](std::size_t c) { return std::pow(du.magnitude(c), s3 * p_j); }), 1.0 / s3);
  const double b = std::pow(avg([&](std::size_t c) { return std::pow(dw.magnitude(c), s3 * p_j); }), 1.0 / s3);
  const double d = std::pow(avg([&](std::size_t c) {
                              return std::pow(dw.magnitude(c), s2 * p.at_cell(s.ambient_cell(u.grid, c)));
                            }),
                            1.0 / s2);
  EstimateRecord r = make_record("integrability_triplet", qj, u.grid);
  r.lhs = std::max({a, b, d});
  r.rhs_components.emplace_back("lambda", lambda);
  r.extras = {{"du_pj", a}, {"dw_pj", b}, {"dw_p", d},
              {"ratio_du_pj", a / lambda}, {"ratio_dw_pj", b / lambda}, {"ratio_dw_p", d / lambda},
              {"p_j", p_j}, {"sigma", sigma}};
  r.finalize();
  return r;
}

struct ComparisonRow {
  DyadicCube cube;
  double lambda = 0.0;
  double p_j = 0.0;
  double distance = 0.0;
  double ratio = 0.0;  ///< distance / lambda
  bool converged = false;
  UhlenbeckReport uhlenbeck;
  EstimateRecord triplet;
};

/// Solves the comparison problem on every cube of the covering of
/// {M* F > lambda} and measures the distance to u, the sup bound of w_j and
/// the integrability triplet.
inline std::vector<ComparisonRow> comparison_study(const GridFunction& u, const ExponentField& p, const Box& root,
                                                   double lambda, double sigma, const SolveOptions& opts = {},
                                                   int max_level = -1, std::size_t max_cubes = 64) {
  const Grid& g = u.grid;
  detail::require_doubled_inside(g, root);
  if (max_level < 0) max_level = default_max_level(g, root);
  const CellField F = energy_density(u, p);
  const double lambda0 = covering_threshold(F, root);
  const CZCover cover = cz_cover(F, root, lambda, lambda0, max_level);
  std::vector<ComparisonRow> rows;
  for (std::size_t j = 0; j < cover.cubes.size() && rows.size() < max_cubes; ++j) {
    const Box q = cover.cubes[j].box();
    if (!g.domain().contains(q.scaled(2.0), 1e-12 * q.length())) continue;
    ComparisonRow row;
    row.cube = cover.cubes[j];
    row.lambda = lambda;
    row.p_j = select_comparison_exponent(q, p).p_j;
    const SolverResult w = solve_comparison(q, u, row.p_j, opts);
    row.converged = w.converged;
    row.distance = comparison_distance(u, w.u, q, p, {0.0, FluxVariant::power});
    row.ratio = row.distance / lambda;
    row.uhlenbeck = uhlenbeck_check(w, q, row.p_j);
    row.triplet = integrability_triplet(u, w.u, q, p, row.p_j, sigma, lambda);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// higher integrability

struct LevelSetMoment {
  double moment = 0.0;  ///< reconstructed integral of F^q over the region
  std::vector<double> lambdas;
  std::vector<double> measures;
};

/// q * integral of lambda^(q-1) |{F > lambda} ∩ region| d lambda on a
/// geometric lambda grid; per interval lambda^q is integrated exactly against
/// the mean of the endpoint measures, and below the first point the measure is
/// held at its first value.
inline LevelSetMoment level_set_moment(const CellField& F, const Box& region, double q, double lambda_lo,
                                       double lambda_hi, int points = 64) {
  require(q >= 1.0, "moment exponent q must be >= 1");
  LevelSetMoment res;
  res.lambdas = geometric_sweep(lambda_lo, lambda_hi, points);
  std::vector<std::pair<double, double>> vw;
  for_each_overlap(F.grid, region, [&](std::size_t c, double w) { vw.emplace_back(F.magnitude(c), w); });
  require(!vw.empty(), "region outside domain");
  for (double l : res.lambdas) {
    double m = 0.0;
    for (const auto& [v, w] : vw)
      if (v > l) m += w;
    res.measures.push_back(m);
  }
  res.moment = std::pow(res.lambdas.front(), q) * res.measures.front();
  for (std::size_t k = 0; k + 1 < res.lambdas.size(); ++k)
    res.moment += (std::pow(res.lambdas[k + 1], q) - std::pow(res.lambdas[k], q)) * 0.5 *
                  (res.measures[k] + res.measures[k + 1]);
  return res;
}

struct HigherIntegrabilityOptions {
  double m = 0.0;  ///< weight exponent, 0 selects 2n
  int lambda_points = 64;
  int max_level = -1;
  double agreement = 0.05;
};

/// (mean_root F^q)^(1/q) <= c mean_2root F + c (mean_2root (|G|^p + h)^q)^(1/q)
/// with F = |Du|^p. The left side is computed by quadrature and again from
/// the distribution function of F on a lambda sweep from lambda0/10 to twice
/// max(max F, max M*F); the good-lambda ratio at (kappa, epsilon) is reported.
inline EstimateRecord higher_integrability_check(const GridFunction& u, const CellField& G, const ExponentField& p,
                                                 double q, const Box& root, double kappa, double epsilon, double m0,
                                                 const HigherIntegrabilityOptions& o = {}) {
  require(q >= 1.0, "q must be >= 1");
  const Grid& g = u.grid;
  require(g == p.grid(), "u and p live on different grids");
  detail::require_doubled_inside(g, root);
  const double m = o.m == 0.0 ? 2.0 * g.dim() : o.m;
  const int max_level = o.max_level < 0 ? default_max_level(g, root) : o.max_level;
  const Box root2 = root.scaled(2.0);
  const CellField F = energy_density(u, p);
  const CellField Gh = data_density(G, p, m);

  EstimateRecord r = make_record("higher_integrability", root, g);
  const double moment = integrate_cells(g, root, [&](std::size_t c) { return std::pow(F.values[c], q); });
  const double vol = overlap_volume(g, root);
  r.lhs = std::pow(moment / vol, 1.0 / q);
  const double lambda0 = mean_cells(g, root2, [&](std::size_t c) { return F.values[c]; });
  r.rhs_components.emplace_back("energy", lambda0);
  r.rhs_components.emplace_back(
      "data", std::pow(mean_cells(g, root2, [&](std::size_t c) { return std::pow(Gh.values[c], q); }), 1.0 / q));
  r.finalize();

  double fmax = 0.0;
  for (std::size_t c = 0; c < F.values.size(); ++c) fmax = std::max(fmax, F.values[c]);
  r.extras.emplace_back("lambda0", lambda0);
  r.extras.emplace_back("q", q);
  r.extras.emplace_back("kappa", kappa);
  r.extras.emplace_back("epsilon", epsilon);
  r.extras.emplace_back("m0", m0);
  r.extras.emplace_back("lhs_quadrature", r.lhs);
  if (lambda0 > 0.0) {
    const LevelSetInputs in = level_set_inputs(F, Gh, root, m0, max_level);
    double mstar_max = 0.0;
    for (double v : in.mF.values) mstar_max = std::max(mstar_max, v);
    const double hi = 2.0 * std::max(fmax, mstar_max);
    const LevelSetMoment ls = level_set_moment(F, root, q, lambda0 / 10.0, hi, o.lambda_points);
    const double lhs_ls = std::pow(ls.moment / vol, 1.0 / q);
    const double rel = std::abs(lhs_ls - r.lhs) / r.lhs;
    r.extras.emplace_back("lhs_levelset", lhs_ls);
    r.extras.emplace_back("levelset_rel_diff", rel);
    if (rel > o.agreement) r.flags.push_back("levelset_mismatch");

    // the split at kappa lambda0 of the maximal-function moment
    const LevelSetMoment ms = level_set_moment(in.mF, root, q, lambda0 / 10.0, hi, o.lambda_points);
    double below = std::pow(ms.lambdas.front(), q) * ms.measures.front();
    for (std::size_t k = 0; k + 1 < ms.lambdas.size(); ++k)
      if (ms.lambdas[k + 1] <= kappa * lambda0)
        below += (std::pow(ms.lambdas[k + 1], q) - std::pow(ms.lambdas[k], q)) * 0.5 *
                 (ms.measures[k] + ms.measures[k + 1]);
    r.extras.emplace_back("mstar_moment", std::pow(ms.moment / vol, 1.0 / q));
    r.extras.emplace_back("mstar_moment_below_kappa_lambda0", std::pow(below / vol, 1.0 / q));

    double delta = 0.0;
    if (kappa >= std::ldexp(1.0, g.dim()))
      for (double l : ls.lambdas) {
        if (l < lambda0) continue;
        const LevelSets s = level_sets(in, l, kappa, epsilon);
        const double mo = masked_measure(g, s.O_lambda, root);
        if (mo > 0.0) delta = std::max(delta, masked_measure(g, s.U_lambda, root) / mo);
      }
    r.extras.emplace_back("delta", delta);
  }
  if (max_level < default_max_level(g, root)) r.flags.push_back("truncated");
  return r;
}

/// The local estimate on nested roots (-R/2, R/2)^n, i.e. doubled roots
/// (-R, R)^n, multiplied through by |root|^(1/q): the unaveraged norms.
inline std::vector<EstimateRecord> global_proxy(const GridFunction& u, const CellField& G, const ExponentField& p,
                                                double q, std::span<const double> box_sizes, double kappa = 0.0,
                                                double epsilon = 1.0, double m0 = 1.0) {
  const int n = u.grid.dim();
  if (kappa == 0.0) kappa = std::ldexp(1.0, n + 1);
  std::vector<EstimateRecord> out;
  for (double R : box_sizes) {
    const Box root = Box::cube(n, Vec{0.0, 0.0, 0.0}, R);
    EstimateRecord r = higher_integrability_check(u, G, p, q, root, kappa, epsilon, m0);
    const double scale = std::pow(overlap_volume(u.grid, root), 1.0 / q);
    r.name = "global_proxy";
    r.lhs *= scale;
    for (auto& [k, v] : r.rhs_components) v *= scale;
    r.extras.emplace_back("R", R);
    r.finalize();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace varexp
