#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "varexp/error.hpp"
#include "varexp/geometry.hpp"

namespace varexp {

/// Uniform Cartesian grid on an axis-parallel box. Nodes and cells are
/// numbered row-major with axis 0 varying slowest.
class Grid {
 public:
  Grid() = default;

  /// Validated constructor; make_grid() is the usual entry point.
  Grid(int dim, const Vec& origin, const Vec& extent, const IVec& cells) : dim_(dim) {
    require(dim >= 1 && dim <= kMaxDim, "grid dimension must be 1, 2 or 3");
    for (int d = 0; d < dim; ++d) {
      require(std::isfinite(origin[d]), "grid origin must be finite");
      require(std::isfinite(extent[d]) && extent[d] > 0.0, "grid extent must be positive");
      require(cells[d] >= 2, "grid needs at least 2 cells per axis");
      origin_[d] = origin[d];
      extent_[d] = extent[d];
      cells_[d] = cells[d];
      h_[d] = extent[d] / cells[d];
    }
  }

  int dim() const { return dim_; }
  const Vec& origin() const { return origin_; }
  const Vec& extent() const { return extent_; }
  const IVec& cells_per_axis() const { return cells_; }
  const Vec& cell_size() const { return h_; }

  IVec nodes_per_axis() const {
    IVec n{1, 1, 1};
    for (int d = 0; d < dim_; ++d) n[d] = cells_[d] + 1;
    return n;
  }

  std::size_t node_count() const { return count(nodes_per_axis()); }
  std::size_t cell_count() const { return count(cells_axis()); }
  int corner_count() const { return 1 << dim_; }

  double cell_volume() const {
    double v = 1.0;
    for (int d = 0; d < dim_; ++d) v *= h_[d];
    return v;
  }

  Box domain() const {
    Box b{dim_, {}, {}};
    for (int d = 0; d < dim_; ++d) {
      b.lo[d] = origin_[d];
      b.hi[d] = origin_[d] + extent_[d];
    }
    return b;
  }

  IVec node_multi(std::size_t node) const { return unflatten(node, nodes_per_axis()); }
  std::size_t node_linear(const IVec& idx) const { return flatten(idx, nodes_per_axis()); }
  IVec cell_multi(std::size_t cell) const { return unflatten(cell, cells_axis()); }
  std::size_t cell_linear(const IVec& idx) const { return flatten(idx, cells_axis()); }

  Vec node_position(std::size_t node) const {
    const IVec i = node_multi(node);
    Vec x{};
    for (int d = 0; d < dim_; ++d) x[d] = origin_[d] + i[d] * h_[d];
    return x;
  }

  Vec cell_center(std::size_t cell) const {
    const IVec i = cell_multi(cell);
    Vec x{};
    for (int d = 0; d < dim_; ++d) x[d] = origin_[d] + (i[d] + 0.5) * h_[d];
    return x;
  }

  /// Node of corner k of a cell; bit d of k selects the upper node along axis d.
  std::size_t cell_corner(std::size_t cell, int k) const {
    IVec i = cell_multi(cell);
    for (int d = 0; d < dim_; ++d) i[d] += (k >> d) & 1;
    return node_linear(i);
  }

  /// d/dx_d of the Q1 basis function of corner k, evaluated at a cell center.
  double gradient_weight(int k, int d) const {
    const double sign = ((k >> d) & 1) ? 1.0 : -1.0;
    return sign / (static_cast<double>(1 << (dim_ - 1)) * h_[d]);
  }

  bool is_boundary_node(std::size_t node) const {
    const IVec i = node_multi(node);
    for (int d = 0; d < dim_; ++d)
      if (i[d] == 0 || i[d] == cells_[d]) return true;
    return false;
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  IVec cells_axis() const {
    IVec n{1, 1, 1};
    for (int d = 0; d < dim_; ++d) n[d] = cells_[d];
    return n;
  }

  static std::size_t count(const IVec& n) {
    return static_cast<std::size_t>(n[0]) * n[1] * n[2];
  }

  static std::size_t flatten(const IVec& i, const IVec& n) {
    return (static_cast<std::size_t>(i[0]) * n[1] + i[1]) * n[2] + i[2];
  }

  static IVec unflatten(std::size_t k, const IVec& n) {
    IVec i{};
    i[2] = static_cast<int>(k % n[2]);
    k /= n[2];
    i[1] = static_cast<int>(k % n[1]);
    i[0] = static_cast<int>(k / n[1]);
    return i;
  }

  int dim_ = 0;
  Vec origin_{};
  Vec extent_{};
  IVec cells_{0, 0, 0};
  Vec h_{};
};

inline Grid make_grid(int dim, std::span<const double> origin, std::span<const double> extent,
                      std::span<const int> cells_per_axis) {
  require(dim >= 1 && dim <= kMaxDim, "grid dimension must be 1, 2 or 3");
  require(origin.size() == static_cast<std::size_t>(dim) &&
              extent.size() == static_cast<std::size_t>(dim) &&
              cells_per_axis.size() == static_cast<std::size_t>(dim),
          "grid dimension mismatch");
  Vec o{}, e{};
  IVec c{0, 0, 0};
  for (int d = 0; d < dim; ++d) {
    o[d] = origin[d];
    e[d] = extent[d];
    c[d] = cells_per_axis[d];
  }
  return Grid(dim, o, e, c);
}

inline Grid make_grid(int dim, std::initializer_list<double> origin,
                      std::initializer_list<double> extent, std::initializer_list<int> cells) {
  return make_grid(dim, std::span<const double>(origin.begin(), origin.size()),
                   std::span<const double>(extent.begin(), extent.size()),
                   std::span<const int>(cells.begin(), cells.size()));
}

/// Uniform grid on a box with the same number of cells along every axis.
inline Grid make_grid(const Box& box, int cells) {
  std::vector<double> o(box.lo.begin(), box.lo.begin() + box.dim);
  std::vector<double> e;
  for (int d = 0; d < box.dim; ++d) e.push_back(box.side(d));
  std::vector<int> c(box.dim, cells);
  return make_grid(box.dim, o, e, c);
}

/// Nodal field u : grid nodes -> R^N, stored node-major.
struct GridFunction {
  Grid grid;
  int codomain = 1;
  std::vector<double> values;

  GridFunction() = default;
  GridFunction(Grid g, int n_components)
      : grid(std::move(g)), codomain(n_components), values(grid.node_count() * n_components, 0.0) {
    require(n_components >= 1, "codomain dimension must be positive");
  }

  double& operator()(std::size_t node, int c = 0) { return values[node * codomain + c]; }
  double operator()(std::size_t node, int c = 0) const { return values[node * codomain + c]; }

  /// Q1 interpolant at a cell center (mean of the cell's corners).
  double cell_value(std::size_t cell, int c = 0) const {
    double s = 0.0;
    const int k_max = grid.corner_count();
    for (int k = 0; k < k_max; ++k) s += (*this)(grid.cell_corner(cell, k), c);
    return s / k_max;
  }
};

/// Cell-centered field, possibly matrix-valued (N x n entries stored row-major
/// per cell).
struct CellField {
  Grid grid;
  int components = 1;
  std::vector<double> values;

  CellField() = default;
  CellField(Grid g, int n_components)
      : grid(std::move(g)), components(n_components), values(grid.cell_count() * n_components, 0.0) {
    require(n_components >= 1, "component count must be positive");
  }

  double& operator()(std::size_t cell, int k = 0) { return values[cell * components + k]; }
  double operator()(std::size_t cell, int k = 0) const { return values[cell * components + k]; }

  std::span<const double> at(std::size_t cell) const {
    return {values.data() + cell * components, static_cast<std::size_t>(components)};
  }

  /// Frobenius norm of the per-cell entry.
  double magnitude(std::size_t cell) const {
    double s = 0.0;
    for (int k = 0; k < components; ++k) s += values[cell * components + k] * values[cell * components + k];
    return std::sqrt(s);
  }
};

template <class Fn>
GridFunction sample_nodes(const Grid& grid, Fn&& fn) {
  GridFunction u(grid, 1);
  for (std::size_t i = 0; i < grid.node_count(); ++i) u.values[i] = fn(grid.node_position(i));
  return u;
}

template <class Fn>
CellField sample_cells(const Grid& grid, Fn&& fn) {
  CellField f(grid, 1);
  for (std::size_t c = 0; c < grid.cell_count(); ++c) f.values[c] = fn(grid.cell_center(c));
  return f;
}

/// Per-cell gradient of the Q1 interpolant at the cell center; for u with N
/// components the entry (c, d) of the N x n Jacobian sits at c * n + d.
inline CellField gradient(const GridFunction& u) {
  const Grid& g = u.grid;
  const int n = g.dim();
  const int N = u.codomain;
  CellField du(g, N * n);
  const int corners = g.corner_count();
  std::array<std::size_t, 8> node{};
  for (std::size_t cell = 0; cell < g.cell_count(); ++cell) {
    for (int k = 0; k < corners; ++k) node[k] = g.cell_corner(cell, k);
    for (int c = 0; c < N; ++c)
      for (int d = 0; d < n; ++d) {
        double s = 0.0;
        for (int k = 0; k < corners; ++k) s += g.gradient_weight(k, d) * u(node[k], c);
        du(cell, c * n + d) = s;
      }
  }
  return du;
}

/// Calls fn(cell, overlap_volume) for every cell meeting the box in positive
/// volume. Overlaps within 1e-12 of a full cell side are snapped to it.
template <class Fn>
void for_each_overlap(const Grid& g, const Box& region, Fn&& fn) {
  require(region.dim == g.dim(), "region dimension mismatch");
  struct Span {
    int first = 0;
    std::vector<double> len;
  };
  std::array<Span, kMaxDim> spans;
  for (int d = 0; d < kMaxDim; ++d) {
    if (d >= g.dim()) {
      spans[d].len.assign(1, 1.0);
      continue;
    }
    const double h = g.cell_size()[d];
    const double o = g.origin()[d];
    const int n = g.cells_per_axis()[d];
    int i0 = static_cast<int>(std::floor((region.lo[d] - o) / h));
    int i1 = static_cast<int>(std::ceil((region.hi[d] - o) / h)) - 1;
    i0 = std::max(i0, 0);
    i1 = std::min(i1, n - 1);
    int first = -1;
    for (int i = i0; i <= i1; ++i) {
      const double a = std::max(region.lo[d], o + i * h);
      const double b = std::min(region.hi[d], o + (i + 1) * h);
      double len = b - a;
      if (std::abs(len - h) <= 1e-12 * h) len = h;
      if (len <= 1e-12 * h) {
        if (first >= 0) break;
        continue;
      }
      if (first < 0) first = i;
      spans[d].len.push_back(len);
    }
    if (first < 0) return;
    spans[d].first = first;
  }
  for (std::size_t a = 0; a < spans[0].len.size(); ++a)
    for (std::size_t b = 0; b < spans[1].len.size(); ++b)
      for (std::size_t c = 0; c < spans[2].len.size(); ++c) {
        const IVec idx{spans[0].first + static_cast<int>(a), spans[1].first + static_cast<int>(b),
                       spans[2].first + static_cast<int>(c)};
        fn(g.cell_linear(idx), spans[0].len[a] * spans[1].len[b] * spans[2].len[c]);
      }
}

/// Volume of region intersected with the grid domain.
inline double overlap_volume(const Grid& g, const Box& region) {
  double v = 0.0;
  for_each_overlap(g, region, [&](std::size_t, double w) { v += w; });
  return v;
}

/// Integral of a per-cell quantity fn(cell) over the region, midpoint rule
/// with partial cells weighted by overlap volume.
template <class Fn>
double integrate_cells(const Grid& g, const Box& region, Fn&& fn) {
  double s = 0.0;
  double vol = 0.0;
  for_each_overlap(g, region, [&](std::size_t cell, double w) {
    s += fn(cell) * w;
    vol += w;
  });
  require(vol > 0.0, "region outside domain");
  return s;
}

/// Mean of fn over region ∩ domain (divides by the clipped measure).
template <class Fn>
double mean_cells(const Grid& g, const Box& region, Fn&& fn) {
  double s = 0.0;
  double vol = 0.0;
  for_each_overlap(g, region, [&](std::size_t cell, double w) {
    s += fn(cell) * w;
    vol += w;
  });
  require(vol > 0.0, "region outside domain");
  return s / vol;
}

inline double integrate(const CellField& f, const Box& region, int component = 0) {
  require(component >= 0 && component < f.components, "component out of range");
  return integrate_cells(f.grid, region, [&](std::size_t c) { return f(c, component); });
}

inline double mean(const CellField& f, const Box& region, int component = 0) {
  require(component >= 0 && component < f.components, "component out of range");
  return mean_cells(f.grid, region, [&](std::size_t c) { return f(c, component); });
}

/// Measure of the cells (by center) flagged in mask, intersected with region.
inline double masked_measure(const Grid& g, const std::vector<char>& mask, const Box& region) {
  double v = 0.0;
  for_each_overlap(g, region, [&](std::size_t cell, double w) {
    if (mask[cell]) v += w;
  });
  return v;
}

}  // namespace varexp
