#pragma once

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "varexp/error.hpp"
#include "varexp/exponent.hpp"
#include "varexp/grid.hpp"
#include "varexp/parallel.hpp"

namespace varexp {

enum class FluxVariant { power, shifted, squared };

/// A(x,z) = a(|z|) z with
///   power:   a(t) = t^(p-2)
///   shifted: a(t) = (gamma + t)^(p-2)
///   squared: a(t) = (gamma^2 + t^2)^((p-2)/2)
struct FluxParams {
  double gamma = 0.0;
  FluxVariant variant = FluxVariant::squared;
};

inline void require_valid(const FluxParams& fp) {
  require(std::isfinite(fp.gamma) && fp.gamma >= 0.0, "gamma must be finite and >= 0");
}

/// Scalar coefficient a(t); callers must treat t = 0 separately when it is
/// singular (p < 2 without regularization).
inline double flux_coefficient(double t, double p, const FluxParams& fp) {
  switch (fp.variant) {
    case FluxVariant::power:
      return std::pow(t, p - 2.0);
    case FluxVariant::shifted:
      return std::pow(fp.gamma + t, p - 2.0);
    case FluxVariant::squared:
      return std::pow(fp.gamma * fp.gamma + t * t, 0.5 * (p - 2.0));
  }
  return 0.0;
}

/// c(t) = t * a'(t), the rank-one weight of the Hessian a I + c zhat zhat^T.
inline double flux_rank_one(double t, double p, const FluxParams& fp) {
  if (t == 0.0 || p == 2.0) return 0.0;
  switch (fp.variant) {
    case FluxVariant::power:
      return (p - 2.0) * std::pow(t, p - 2.0);
    case FluxVariant::shifted:
      return (p - 2.0) * std::pow(fp.gamma + t, p - 3.0) * t;
    case FluxVariant::squared: {
      const double s = fp.gamma * fp.gamma + t * t;
      return (p - 2.0) * std::pow(s, 0.5 * (p - 2.0)) * (t * t / s);
    }
  }
  return 0.0;
}

/// |A(x,z)| as a function of t = |z|; zero at t = 0 for every variant.
inline double flux_magnitude(double t, double p, const FluxParams& fp) {
  return t == 0.0 ? 0.0 : flux_coefficient(t, p, fp) * t;
}

/// Potential phi with phi'(t) = a(t) t and phi(0) = 0.
inline double potential(double t, double p, const FluxParams& fp) {
  if (t == 0.0) return 0.0;
  const double g = fp.gamma;
  if (fp.variant == FluxVariant::power || g == 0.0) return std::pow(t, p) / p;
  if (fp.variant == FluxVariant::squared) {
    const double u = t / g;
    return std::pow(g, p) * std::expm1(0.5 * p * std::log1p(u * u)) / p;
  }
  // shifted: g^p * integral_0^u (1+v)^(p-2) v dv
  const double u = t / g;
  double integral = 0.0;
  if (u < 0.1) {
    double binom = 1.0;
    double upow = u * u;
    for (int k = 0; k < 40; ++k) {
      const double term = binom * upow / (k + 2);
      integral += term;
      if (std::abs(term) <= 1e-18 * std::abs(integral)) break;
      binom *= (p - 2.0 - k) / (k + 1);
      upow *= u;
    }
  } else {
    const double l = std::log1p(u);
    integral = std::expm1(p * l) / p - std::expm1((p - 1.0) * l) / (p - 1.0);
  }
  return std::pow(g, p) * integral;
}

inline double frobenius(std::span<const double> z) {
  double s = 0.0;
  for (double v : z) s += v * v;
  return std::sqrt(s);
}

/// A(z) with exponent p, written into out (same shape as z).
inline void flux(std::span<const double> z, double p, const FluxParams& fp, std::span<double> out) {
  const double t = frobenius(z);
  const double a = t == 0.0 ? 0.0 : flux_coefficient(t, p, fp);
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = a * z[i];
}

inline std::vector<double> flux(const Vec& x, std::span<const double> z, const ExponentField& p,
                                const FluxParams& fp) {
  std::vector<double> out(z.size());
  flux(z, p.value_at(x), fp, out);
  return out;
}

// ---------------------------------------------------------------------------
// structure constants

struct StructureWitness {
  Vec x{};
  Vec y{};
  std::vector<double> z;
  std::vector<double> xi;
  double ratio = 0.0;
};

struct StructureFit {
  double c1 = 0.0;
  double c2 = std::numeric_limits<double>::infinity();
  double c3 = 0.0;
  double c4 = 0.0;
  double h1_sup = 0.0;
  double h2_sup = 0.0;
  std::size_t samples = 0;
  double min_monotonicity = std::numeric_limits<double>::infinity();
  StructureWitness w1, w2, w3, w4;
};

namespace detail {

struct StructureSampler {
  std::mt19937_64 rng;
  const Grid& grid;
  int components;

  Vec point() {
    Vec x{};
    for (int d = 0; d < grid.dim(); ++d)
      x[d] = std::uniform_real_distribution<double>(grid.origin()[d], grid.origin()[d] + grid.extent()[d])(rng);
    return x;
  }

  std::vector<double> direction() {
    std::normal_distribution<double> nd;
    std::vector<double> v(components);
    double s = 0.0;
    do {
      s = 0.0;
      for (double& e : v) {
        e = nd(rng);
        s += e * e;
      }
    } while (s == 0.0);
    s = std::sqrt(s);
    for (double& e : v) e /= s;
    return v;
  }

  double magnitude() { return std::pow(10.0, std::uniform_real_distribution<double>(-6.0, 6.0)(rng)); }

  std::vector<double> vector() {
    auto v = direction();
    const double m = magnitude();
    for (double& e : v) e *= m;
    return v;
  }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

/// Fits the structure constants of A over random samples. c1, c2 are taken
/// over |z| >= 1 and h1, h2 are the resulting sup residuals over all samples.
inline StructureFit structure_fit(const ExponentField& p, const FluxParams& fp, std::size_t budget,
                                  std::uint64_t seed, int codomain = 1) {
  require(budget >= 1000, "structure_fit needs at least 1000 samples");
  require_valid(fp);
  const Grid& g = p.grid();
  detail::StructureSampler S{std::mt19937_64(seed), g, codomain * g.dim()};
  StructureFit fit;
  fit.samples = budget;
  const std::size_t m = static_cast<std::size_t>(codomain * g.dim());
  std::vector<double> az(m), axi(m), ay(m), dz(m), da(m);
  std::vector<std::array<double, 3>> growth;  // (t, p, a) for the h residual pass
  growth.reserve(budget);

  for (std::size_t s = 0; s < budget; ++s) {
    const Vec x = S.point();
    const double px = p.value_at(x);
    const auto z = S.vector();
    const double t = frobenius(z);
    const double a = flux_coefficient(t, px, fp);
    const double ratio = a / std::pow(t, px - 2.0);
    if (t >= 1.0) {
      if (ratio > fit.c1) fit.c1 = ratio, fit.w1 = {x, x, z, {}, ratio};
      if (ratio < fit.c2) fit.c2 = ratio, fit.w2 = {x, x, z, {}, ratio};
    }
    growth.push_back({t, px, a});

    // log-modulus in x
    const Vec y = S.point();
    const double py = p.value_at(y);
    // exponent differences at roundoff level come from interpolation, not from x-dependence
    const double dp = std::abs(px - py) <= 16.0 * std::numeric_limits<double>::epsilon() * std::max(px, py)
                          ? 0.0
                          : std::abs(px - py);
    const double denom = dp * std::abs(std::log(t)) * (std::pow(t, px - 1.0) + std::pow(t, py - 1.0));
    if (denom > 0.0) {
      flux(z, px, fp, az);
      flux(z, py, fp, ay);
      double diff = 0.0;
      for (std::size_t i = 0; i < m; ++i) diff += (az[i] - ay[i]) * (az[i] - ay[i]);
      const double r3 = std::sqrt(diff) / denom;
      if (r3 > fit.c3) fit.c3 = r3, fit.w3 = {x, y, z, {}, r3};
    }

    // coercivity and monotonicity; every other sample uses xi = theta z
    std::vector<double> xi;
    if (s % 2 == 0) {
      xi = S.vector();
    } else {
      const double theta = std::uniform_real_distribution<double>(-1.0, 2.0)(S.rng);
      xi = z;
      for (double& e : xi) e *= theta;
    }
    flux(z, px, fp, az);
    flux(xi, px, fp, axi);
    for (std::size_t i = 0; i < m; ++i) {
      dz[i] = z[i] - xi[i];
      da[i] = az[i] - axi[i];
    }
    const double mono = detail::dot(da, dz);
    fit.min_monotonicity = std::min(fit.min_monotonicity, mono);
    const double rhs = std::pow(frobenius(xi), px) + mono;
    if (rhs > 0.0) {
      const double r4 = std::pow(t, px) / rhs;
      if (r4 > fit.c4) fit.c4 = r4, fit.w4 = {x, x, z, xi, r4};
    }
  }
  if (!std::isfinite(fit.c2)) fit.c2 = 0.0;
  for (const auto& [t, px, a] : growth) {
    fit.h1_sup = std::max(fit.h1_sup, a * t - fit.c1 * std::pow(t, px - 2.0) * t);
    fit.h2_sup = std::max(fit.h2_sup, fit.c2 * std::pow(t, px - 2.0) * t * t - a * t * t);
  }
  return fit;
}

// ---------------------------------------------------------------------------
// discrete energy

/// J(u) = sum_cells w_c [phi_p(|Du|) - A(x_c, G_c) : Du] + 1/2 sum_i m_i |u_i - f_i|^2
/// on the Q1 grid with one quadrature point per cell. w_c is the overlap of
/// the cell with the integration region; the nodal fidelity term is optional.
class DiscreteEnergy {
 public:
  DiscreteEnergy(ExponentField p, const CellField* G, FluxParams fp, int codomain, const Box& region)
      : p_(std::move(p)), params_(fp), N_(codomain) {
    require_valid(fp);
    const Grid& g = p_.grid();
    require(codomain >= 1, "codomain must be positive");
    weight_.assign(g.cell_count(), 0.0);
    for_each_overlap(g, region, [&](std::size_t c, double w) { weight_[c] = w; });
    if (G) {
      require(G->grid == g, "G lives on a different grid");
      require(G->components == N_ * g.dim(), "G has the wrong number of components");
      G_ = *G;
    }
    update_rhs();
  }

  const Grid& grid() const { return p_.grid(); }
  const ExponentField& exponent() const { return p_; }
  const FluxParams& params() const { return params_; }
  int codomain() const { return N_; }
  std::size_t dofs() const { return grid().node_count() * N_; }

  void set_gamma(double gamma) {
    params_.gamma = gamma;
    require_valid(params_);
    update_rhs();
  }

  /// Adds 1/2 sum_i mass_i |u_i - target_i|^2 (mass per node, target per dof).
  void set_fidelity(std::vector<double> mass, std::vector<double> target) {
    require(mass.size() == grid().node_count() && target.size() == dofs(), "fidelity data has wrong size");
    mass_ = std::move(mass);
    target_ = std::move(target);
  }

  double value(std::span<const double> u) const {
    const Grid& g = grid();
    std::vector<double> per_cell(g.cell_count(), 0.0);
    parallel_for(g.cell_count(), [&](std::size_t c) {
      if (weight_[c] == 0.0) return;
      Local L = local(u, c);
      double coupling = 0.0;
      if (!rhs_.empty())
        for (int i = 0; i < L.m; ++i) coupling += rhs_[c * L.m + i] * L.z[i];
      per_cell[c] = weight_[c] * (potential(L.t, p_.at_cell(c), params_) - coupling);
    });
    double total = 0.0;
    for (double v : per_cell) total += v;
    if (!mass_.empty())
      for (std::size_t i = 0; i < mass_.size(); ++i)
        for (int k = 0; k < N_; ++k) {
          const double d = u[i * N_ + k] - target_[i * N_ + k];
          total += 0.5 * mass_[i] * d * d;
        }
    return total;
  }

  /// Full gradient over all dofs (no boundary masking).
  void gradient(std::span<const double> u, std::span<double> out) const {
    const Grid& g = grid();
    const int n = g.dim();
    const int K = g.corner_count();
    const int m = N_ * n;
    std::vector<double> local_grad(g.cell_count() * K * N_, 0.0);
    parallel_for(g.cell_count(), [&](std::size_t c) {
      if (weight_[c] == 0.0) return;
      Local L = local(u, c);
      const double a = L.t == 0.0 ? 0.0 : flux_coefficient(L.t, p_.at_cell(c), params_);
      std::array<double, 3 * kMaxDim> s{};
      for (int i = 0; i < m; ++i) s[i] = weight_[c] * (a * L.z[i] - (rhs_.empty() ? 0.0 : rhs_[c * m + i]));
      double* lg = &local_grad[c * K * N_];
      for (int k = 0; k < K; ++k)
        for (int comp = 0; comp < N_; ++comp) {
          double acc = 0.0;
          for (int d = 0; d < n; ++d) acc += s[comp * n + d] * g.gradient_weight(k, d);
          lg[k * N_ + comp] = acc;
        }
    });
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t c = 0; c < g.cell_count(); ++c) {
      if (weight_[c] == 0.0) continue;
      for (int k = 0; k < K; ++k) {
        const std::size_t node = g.cell_corner(c, k);
        for (int comp = 0; comp < N_; ++comp) out[node * N_ + comp] += local_grad[(c * K + k) * N_ + comp];
      }
    }
    if (!mass_.empty())
      for (std::size_t i = 0; i < mass_.size(); ++i)
        for (int k = 0; k < N_; ++k) out[i * N_ + k] += mass_[i] * (u[i * N_ + k] - target_[i * N_ + k]);
  }

  /// Hessian restricted to free dofs; free_index maps dof -> row or -1.
  Eigen::SparseMatrix<double> hessian(std::span<const double> u, const std::vector<int>& free_index,
                                      int n_free) const {
    const Grid& g = grid();
    const int n = g.dim();
    const int K = g.corner_count();
    const int m = N_ * n;
    const int L_size = K * N_;
    const std::size_t per_cell = static_cast<std::size_t>(L_size) * L_size;
    std::vector<double> blocks(g.cell_count() * per_cell, 0.0);
    parallel_for(g.cell_count(), [&](std::size_t c) {
      if (weight_[c] == 0.0) return;
      Local L = local(u, c);
      const double pc = p_.at_cell(c);
      const double a = L.t == 0.0 ? zero_slope(pc) : flux_coefficient(L.t, pc, params_);
      const double r = flux_rank_one(L.t, pc, params_);
      std::array<double, 3 * kMaxDim> zh{};
      for (int i = 0; i < m; ++i) zh[i] = L.t == 0.0 ? 0.0 : L.z[i] / L.t;
      // B[(k,comp), (comp', d)] = gradient weight when comp == comp'
      double* blk = &blocks[c * per_cell];
      for (int k = 0; k < K; ++k)
        for (int ci = 0; ci < N_; ++ci) {
          const int row = k * N_ + ci;
          for (int l = 0; l < K; ++l)
            for (int cj = 0; cj < N_; ++cj) {
              const int col = l * N_ + cj;
              double acc = 0.0;
              double proj_i = 0.0, proj_j = 0.0;
              for (int d = 0; d < n; ++d) {
                const double gk = g.gradient_weight(k, d);
                const double gl = g.gradient_weight(l, d);
                if (ci == cj) acc += a * gk * gl;
                proj_i += zh[ci * n + d] * gk;
                proj_j += zh[cj * n + d] * gl;
              }
              acc += r * proj_i * proj_j;
              blk[row * L_size + col] = weight_[c] * acc;
            }
        }
    });
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(g.cell_count() * per_cell + (mass_.empty() ? 0 : dofs()));
    for (std::size_t c = 0; c < g.cell_count(); ++c) {
      if (weight_[c] == 0.0) continue;
      const double* blk = &blocks[c * per_cell];
      for (int k = 0; k < K; ++k)
        for (int ci = 0; ci < N_; ++ci) {
          const int fi = free_index[g.cell_corner(c, k) * N_ + ci];
          if (fi < 0) continue;
          for (int l = 0; l < K; ++l)
            for (int cj = 0; cj < N_; ++cj) {
              const int fj = free_index[g.cell_corner(c, l) * N_ + cj];
              if (fj < 0) continue;
              trip.emplace_back(fi, fj, blk[(k * N_ + ci) * L_size + l * N_ + cj]);
            }
        }
    }
    if (!mass_.empty())
      for (std::size_t i = 0; i < mass_.size(); ++i)
        for (int k = 0; k < N_; ++k) {
          const int fi = free_index[i * N_ + k];
          if (fi >= 0) trip.emplace_back(fi, fi, mass_[i]);
        }
    Eigen::SparseMatrix<double> H(n_free, n_free);
    H.setFromTriplets(trip.begin(), trip.end());
    return H;
  }

 private:
  struct Local {
    std::array<double, 3 * kMaxDim> z{};
    double t = 0.0;
    int m = 0;
  };

  Local local(std::span<const double> u, std::size_t c) const {
    const Grid& g = grid();
    const int n = g.dim();
    Local L;
    L.m = N_ * n;
    for (int k = 0; k < g.corner_count(); ++k) {
      const std::size_t node = g.cell_corner(c, k);
      for (int comp = 0; comp < N_; ++comp) {
        const double v = u[node * N_ + comp];
        for (int d = 0; d < n; ++d) L.z[comp * n + d] += g.gradient_weight(k, d) * v;
      }
    }
    double s = 0.0;
    for (int i = 0; i < L.m; ++i) s += L.z[i] * L.z[i];
    L.t = std::sqrt(s);
    return L;
  }

  /// a(0): finite for the regularized variants; for a degenerate potential
  /// the curvature at zero is 0 (p > 2), 1 (p = 2) or unbounded (p < 2).
  double zero_slope(double p) const {
    if (params_.variant != FluxVariant::power && params_.gamma > 0.0) return flux_coefficient(0.0, p, params_);
    if (p > 2.0) return 0.0;
    if (p == 2.0) return 1.0;
    return std::numeric_limits<double>::max() * 1e-10;
  }

  void update_rhs() {
    rhs_.clear();
    if (G_.values.empty()) return;
    const Grid& g = grid();
    const int m = N_ * g.dim();
    rhs_.assign(g.cell_count() * m, 0.0);
    for (std::size_t c = 0; c < g.cell_count(); ++c)
      flux(G_.at(c), p_.at_cell(c), params_, std::span<double>(rhs_.data() + c * m, m));
  }

  ExponentField p_;
  CellField G_;
  FluxParams params_;
  int N_;
  std::vector<double> weight_;
  std::vector<double> rhs_;  ///< A(x_c, G_c) per cell
  std::vector<double> mass_;
  std::vector<double> target_;
};

/// Discrete energy of u over region.
inline double energy(const GridFunction& u, const CellField& G, const ExponentField& p, const FluxParams& fp,
                     const Box& region) {
  require(u.grid == p.grid(), "u and p live on different grids");
  const DiscreteEnergy J(p, G.values.empty() ? nullptr : &G, fp, u.codomain, region);
  return J.value(u.values);
}

/// Gradient of the discrete energy with respect to nodal values; entries at
/// nodes flagged in bc_mask are zero.
inline GridFunction energy_gradient(const GridFunction& u, const CellField& G, const ExponentField& p,
                                    const FluxParams& fp, const Box& region, const std::vector<char>& bc_mask) {
  require(u.grid == p.grid(), "u and p live on different grids");
  require(bc_mask.size() == u.grid.node_count(), "bc_mask has wrong length");
  const DiscreteEnergy J(p, G.values.empty() ? nullptr : &G, fp, u.codomain, region);
  GridFunction r(u.grid, u.codomain);
  J.gradient(u.values, r.values);
  for (std::size_t i = 0; i < bc_mask.size(); ++i)
    if (bc_mask[i])
      for (int k = 0; k < u.codomain; ++k) r(i, k) = 0.0;
  return r;
}

/// Nodes on the topological boundary of the grid.
inline std::vector<char> boundary_mask(const Grid& g) {
  std::vector<char> mask(g.node_count(), 0);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = g.is_boundary_node(i);
  return mask;
}

}  // namespace varexp
