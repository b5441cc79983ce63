#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <utility>
#include <vector>

#include "varexp/error.hpp"
#include "varexp/exponent.hpp"
#include "varexp/grid.hpp"
#include "varexp/record.hpp"

namespace varexp {

namespace detail {
inline void require_same_grid(const Grid& a, const Grid& b) { require(a == b, "fields live on different grids"); }
}  // namespace detail

/// Integral over region of |f(x)|^p(x); |.| is the Frobenius norm per cell.
inline double modular(const CellField& f, const ExponentField& p, const Box& region) {
  detail::require_same_grid(f.grid, p.grid());
  return integrate_cells(f.grid, region, [&](std::size_t c) { return std::pow(f.magnitude(c), p.at_cell(c)); });
}

struct LuxemburgResult {
  double norm = 0.0;
  double modular_at_norm = 0.0;
  int bisection_iterations = 0;
};

/// inf{lambda > 0 : modular(f / lambda) <= 1} by bracketing and bisection.
inline LuxemburgResult luxemburg_norm(const CellField& f, const ExponentField& p, const Box& region,
                                      double rel_tol = 1e-10) {
  detail::require_same_grid(f.grid, p.grid());
  std::vector<std::pair<double, double>> cells;  // (|f|, overlap weight)
  std::vector<double> expo;
  double fmax = 0.0;
  for_each_overlap(f.grid, region, [&](std::size_t c, double w) {
    const double v = f.magnitude(c);
    require(std::isfinite(v), "non-finite modular");
    if (v > 0.0) {
      cells.emplace_back(v, w);
      expo.push_back(p.at_cell(c));
      fmax = std::max(fmax, v);
    }
  });
  LuxemburgResult res;
  if (cells.empty()) return res;

  auto rho = [&](double lambda) {
    double s = 0.0;
    for (std::size_t i = 0; i < cells.size(); ++i) s += std::pow(cells[i].first / lambda, expo[i]) * cells[i].second;
    return s;
  };

  double lo = std::max(fmax, std::numeric_limits<double>::min());
  double hi = lo;
  if (rho(lo) > 1.0) {
    do {
      lo = hi;
      hi *= 2.0;
    } while (rho(hi) > 1.0);
  } else {
    do {
      hi = lo;
      lo *= 0.5;
    } while (rho(lo) <= 1.0);
  }
  int it = 0;
  while (hi - lo > rel_tol * hi) {
    const double mid = 0.5 * (lo + hi);
    if (rho(mid) > 1.0)
      lo = mid;
    else
      hi = mid;
    ++it;
  }
  res.norm = 0.5 * (lo + hi);
  res.modular_at_norm = rho(res.norm);
  res.bisection_iterations = it;
  return res;
}

/// sup over lambda of lambda |{|f| > lambda} ∩ region|^(1/s). The supremum is
/// approached just below each distinct value v, giving v |{|f| >= v}|^(1/s).
inline double marcinkiewicz_norm(const CellField& f, double s, const Box& region) {
  require(s >= 1.0, "Marcinkiewicz exponent s must be >= 1");
  std::vector<std::pair<double, double>> vw;
  for_each_overlap(f.grid, region, [&](std::size_t c, double w) { vw.emplace_back(f.magnitude(c), w); });
  require(!vw.empty(), "region outside domain");
  std::sort(vw.begin(), vw.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  double best = 0.0;
  double measure = 0.0;
  for (std::size_t k = 0; k < vw.size();) {
    const double v = vw[k].first;
    while (k < vw.size() && vw[k].first == v) measure += vw[k++].second;
    if (v > 0.0) best = std::max(best, v * std::pow(measure, 1.0 / s));
  }
  return best;
}

/// h(x) = (e + |x|)^(-m) at cell centers.
struct DecayWeight {
  double m = 0.0;
  CellField values;
};

inline double decay_value(const Vec& x, double m) { return std::pow(std::numbers::e + norm(x), -m); }

inline DecayWeight decay_weight(const Grid& grid, double m) {
  require(m > grid.dim(), "decay exponent m must exceed the dimension");
  return {m, sample_cells(grid, [m](const Vec& x) { return decay_value(x, m); })};
}

/// Measured form of the variable-exponent Jensen ("key") estimate at x_eval.
/// When |x_eval| is the largest |y| over Q the pointwise weight term is not
/// summed (it is dominated by the averaged one) and is kept in extras.
inline EstimateRecord jensen_check(const CellField& f, const Box& q, const ExponentField& p, double m,
                                   const Vec& x_eval, double k1, double beta) {
  detail::require_same_grid(f.grid, p.grid());
  const Grid& g = f.grid;
  require(m > g.dim(), "decay exponent m must exceed the dimension");
  require(q.contains(x_eval, 1e-12 * q.length()), "evaluation point must lie in Q");
  const double avg = mean_cells(g, q, [&](std::size_t c) { return f.magnitude(c); });
  const double admissible = k1 * std::max(1.0, std::pow(q.volume(), -beta));
  if (!(avg <= admissible)) throw Error("key-estimate precondition failed");

  EstimateRecord r = make_record("jensen", q, g);
  const double px = p.value_at(x_eval);
  r.lhs = std::pow(avg, px);
  const double modular_mean = mean_cells(g, q, [&](std::size_t c) { return std::pow(f.magnitude(c), p.at_cell(c)); });
  const double pointwise = decay_value(x_eval, m);
  const double weight_mean = mean_cells(g, q, [&](std::size_t c) { return decay_value(g.cell_center(c), m); });
  r.rhs_components.emplace_back("modular_mean", modular_mean);
  if (norm(x_eval) >= q.max_norm() * (1.0 - 1e-12)) {
    r.flags.push_back("pointwise_term_dropped");
    r.extras.emplace_back("pointwise_weight", pointwise);
  } else {
    r.rhs_components.emplace_back("pointwise_weight", pointwise);
  }
  r.rhs_components.emplace_back("weight_mean", weight_mean);
  r.extras.emplace_back("p_at_x", px);
  r.finalize();
  return r;
}

/// Measured variable-exponent Sobolev-Poincaré inequality on Q.
inline EstimateRecord sobolev_poincare_check(const GridFunction& f, const Box& q, const ExponentField& p, double s,
                                             double m) {
  detail::require_same_grid(f.grid, p.grid());
  const Grid& g = f.grid;
  require(m > g.dim(), "decay exponent m must exceed the dimension");
  const double p_minus_q = exponent_range(p, q).first;
  const double sobolev = g.dim() == 1 ? std::numeric_limits<double>::infinity()
                                      : static_cast<double>(g.dim()) / (g.dim() - 1);
  require(s >= 1.0 && s < std::min(sobolev, p_minus_q), "s out of range for Sobolev-Poincaré");

  const double side = q.length();
  std::vector<double> avg(f.codomain);
  for (int k = 0; k < f.codomain; ++k) avg[k] = mean_cells(g, q, [&](std::size_t c) { return f.cell_value(c, k); });
  auto deviation = [&](std::size_t c) {
    double acc = 0.0;
    for (int k = 0; k < f.codomain; ++k) acc += (f.cell_value(c, k) - avg[k]) * (f.cell_value(c, k) - avg[k]);
    return std::sqrt(acc);
  };
  const CellField df = gradient(f);

  EstimateRecord r = make_record("sobolev_poincare", q, g);
  r.lhs = mean_cells(g, q, [&](std::size_t c) { return std::pow(deviation(c) / side, p.at_cell(c)); });
  const double grad_term =
      std::pow(mean_cells(g, q, [&](std::size_t c) { return std::pow(df.magnitude(c), p.at_cell(c) / s); }), s);
  r.rhs_components.emplace_back("gradient_term", grad_term);
  r.rhs_components.emplace_back("weight_mean",
                                mean_cells(g, q, [&](std::size_t c) { return decay_value(g.cell_center(c), m); }));
  r.extras.emplace_back("s", s);
  r.finalize();
  return r;
}

/// mean over Q of log(e + |f| / mean_Q |f|)^s.
inline double log_mean_check(const CellField& f, const Box& q, double s) {
  require(s >= 1.0, "log-mean exponent s must be >= 1");
  const double avg = mean_cells(f.grid, q, [&](std::size_t c) { return f.magnitude(c); });
  if (!(avg > 0.0)) throw Error("log-mean check needs a nonzero mean");
  return mean_cells(f.grid, q, [&](std::size_t c) {
    return std::pow(std::log(std::numbers::e + f.magnitude(c) / avg), s);
  });
}

}  // namespace varexp
