#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "varexp/error.hpp"
#include "varexp/exponent.hpp"
#include "varexp/grid.hpp"
#include "varexp/io.hpp"
#include "varexp/operator.hpp"
#include "varexp/solver.hpp"

namespace varexp {

struct DenoiseOptions {
  double strength = 0.5;  ///< total diffusion time
  double p_min = 1.2;
  double p_max = 2.0;
  int iterations = 4;      ///< implicit time steps
  double edge_k = 2000.0;  ///< edge sensitivity k in p = p_min + (p_max - p_min) / (1 + k |grad|^2)
  double smoothing = 1.5; ///< Gaussian pre-smoothing (pixels) for the edge detector
  double gamma = 1e-3;    ///< final regularization of the flux
};

struct DenoiseResult {
  Image image;
  ExponentField p;
  GridFunction u;
  bool converged = true;
  int newton_iterations = 0;
};

/// Pixel (row, col) becomes node (row, col) of a unit-spaced grid; values in [0, 1].
inline GridFunction image_to_field(const Image& img) {
  require(img.width >= 3 && img.height >= 3, "image must be at least 3x3 pixels");
  const Grid g = make_grid(2, {0.0, 0.0}, {static_cast<double>(img.height - 1), static_cast<double>(img.width - 1)},
                           {img.height - 1, img.width - 1});
  GridFunction u(g, 1);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) u.values[i] = img.pixels[i] / 255.0;
  return u;
}

inline Image field_to_image(const GridFunction& u) {
  Image img;
  img.height = u.grid.cells_per_axis()[0] + 1;
  img.width = u.grid.cells_per_axis()[1] + 1;
  img.pixels.resize(u.values.size());
  for (std::size_t i = 0; i < u.values.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(u.values[i], 0.0, 1.0) * 255.0));
  return img;
}

/// Vertical step edge between columns edge_col - 1 and edge_col plus Gaussian
/// noise of the given standard deviation (gray levels), clamped to [0, 255].
inline Image step_edge_image(int width, int height, int edge_col, double low, double high, double noise,
                             std::uint64_t seed) {
  require(width >= 3 && height >= 3 && edge_col > 0 && edge_col < width, "invalid step-edge geometry");
  Image img{width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height)};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, noise);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const double v = (c < edge_col ? low : high) + (noise > 0.0 ? gauss(rng) : 0.0);
      img.at(r, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
  return img;
}

struct StepEdgeMetrics {
  double edge_column = 0.0;   ///< mean over rows of the column right of the largest jump
  double max_edge_shift = 0.0;  ///< largest per-row distance to the true edge column
  double flat_variance = 0.0;  ///< larger of the two flat-side variances
};

/// Edge position and flat-region variance of a vertical step image; flat
/// regions are the columns at least margin pixels from the edge.
inline StepEdgeMetrics step_edge_metrics(const Image& img, int edge_col, int margin) {
  StepEdgeMetrics m;
  for (int r = 0; r < img.height; ++r) {
    int best = 1;
    double jump = -1.0;
    for (int c = 1; c < img.width; ++c) {
      const double d = std::abs(double(img.at(r, c)) - double(img.at(r, c - 1)));
      if (d > jump) {
        jump = d;
        best = c;
      }
    }
    m.edge_column += best;
    m.max_edge_shift = std::max(m.max_edge_shift, std::abs(double(best - edge_col)));
  }
  m.edge_column /= img.height;
  auto variance = [&](int c0, int c1) {
    double s = 0.0, s2 = 0.0, n = 0.0;
    for (int r = 0; r < img.height; ++r)
      for (int c = c0; c < c1; ++c) {
        s += img.at(r, c);
        s2 += double(img.at(r, c)) * img.at(r, c);
        n += 1.0;
      }
    require(n > 0.0, "flat region is empty");
    return std::max(0.0, s2 / n - (s / n) * (s / n));
  };
  m.flat_variance = std::max(variance(0, edge_col - margin), variance(edge_col + margin, img.width));
  return m;
}

/// Separable Gaussian blur of a 2D nodal field with clamped borders.
inline GridFunction gaussian_smooth(const GridFunction& u, double sigma) {
  if (sigma <= 0.0) return u;
  const int rows = u.grid.cells_per_axis()[0] + 1;
  const int cols = u.grid.cells_per_axis()[1] + 1;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) total += kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
  for (double& k : kernel) k /= total;
  GridFunction tmp = u, out = u;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double s = 0.0;
      for (int k = -radius; k <= radius; ++k) s += kernel[k + radius] * u.values[r * cols + std::clamp(c + k, 0, cols - 1)];
      tmp.values[r * cols + c] = s;
    }
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double s = 0.0;
      for (int k = -radius; k <= radius; ++k)
        s += kernel[k + radius] * tmp.values[std::clamp(r + k, 0, rows - 1) * cols + c];
      out.values[r * cols + c] = s;
    }
  return out;
}

/// Edge-detector exponent: near p_max in flat regions, near p_min on edges.
inline ExponentField edge_exponent(const GridFunction& u, const DenoiseOptions& o) {
  const GridFunction s = gaussian_smooth(u, o.smoothing);
  const int rows = u.grid.cells_per_axis()[0] + 1;
  const int cols = u.grid.cells_per_axis()[1] + 1;
  GridFunction p(u.grid, 1);
  auto at = [&](int r, int c) { return s.values[r * cols + c]; };
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const int r0 = std::max(r - 1, 0), r1 = std::min(r + 1, rows - 1);
      const int c0 = std::max(c - 1, 0), c1 = std::min(c + 1, cols - 1);
      const double gr = (at(r1, c) - at(r0, c)) / (r1 - r0);
      const double gc = (at(r, c1) - at(r, c0)) / (c1 - c0);
      const double v = o.p_min + (o.p_max - o.p_min) / (1.0 + o.edge_k * (gr * gr + gc * gc));
      p.values[r * cols + c] = std::clamp(v, o.p_min, o.p_max);
    }
  return ExponentField(std::move(p));
}

/// Implicit time steps of the p(x)-Laplacian flow with natural boundary
/// conditions: each step minimizes the integral of phi_p(|Du|) plus
/// |u - u_prev|^2 / (2 tau) with lumped nodal masses, tau = strength / iterations.
inline DenoiseResult denoise(const Image& input, const DenoiseOptions& o) {
  require(o.p_min > 1.0, "p_min must exceed 1");
  require(o.p_max >= o.p_min, "p_max must be >= p_min");
  require(o.strength >= 0.0 && o.iterations >= 1, "strength must be >= 0 and iterations >= 1");
  require(o.gamma > 0.0, "denoise gamma must be positive");
  DenoiseResult res;
  res.u = image_to_field(input);
  res.p = edge_exponent(res.u, o);
  if (o.strength == 0.0) {
    res.image = input;
    return res;
  }
  const Grid& g = res.u.grid;
  const double tau = o.strength / o.iterations;
  std::vector<double> mass(g.node_count(), 0.0);
  for (std::size_t c = 0; c < g.cell_count(); ++c)
    for (int k = 0; k < g.corner_count(); ++k) mass[g.cell_corner(c, k)] += g.cell_volume() / g.corner_count() / tau;
  SolveOptions so;
  so.gamma_schedule = {1.0, 1e-1, 1e-2, o.gamma};
  so.gamma_floor = o.gamma;
  so.tolerance = 1e-9;
  DiscreteEnergy J(res.p, nullptr, {1.0, FluxVariant::squared}, 1, g.domain());
  const std::vector<char> none(g.node_count(), 0);
  for (int step = 0; step < o.iterations; ++step) {
    J.set_fidelity(mass, res.u.values);
    SolverResult r = minimize(J, res.u, none, so);
    res.newton_iterations += r.iterations;
    res.converged = res.converged && r.converged;
    res.u = std::move(r.u);
  }
  res.image = field_to_image(res.u);
  return res;
}

}  // namespace varexp
