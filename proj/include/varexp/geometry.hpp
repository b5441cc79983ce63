#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <ostream>
#include <span>

#include "varexp/error.hpp"

namespace varexp {

inline constexpr int kMaxDim = 3;

/// Point or direction in R^n, n <= 3. Components past the active dimension
/// are kept at zero so that norms can ignore the dimension.
using Vec = std::array<double, kMaxDim>;
using IVec = std::array<int, kMaxDim>;

inline double norm(const Vec& x) {
  return std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
}

inline double distance(const Vec& a, const Vec& b) {
  const Vec d{a[0] - b[0], a[1] - b[1], a[2] - b[2]};
  return norm(d);
}

inline Vec make_vec(std::span<const double> xs) {
  require(xs.size() <= kMaxDim, "vector has more than 3 components");
  Vec v{};
  std::copy(xs.begin(), xs.end(), v.begin());
  return v;
}

/// Closed axis-parallel box [lo, hi] in R^dim. Cubes are boxes with equal
/// sides; scaling keeps the center fixed.
struct Box {
  int dim = 0;
  Vec lo{};
  Vec hi{};

  static Box cube(int dim, const Vec& center, double side) {
    Box b{dim, {}, {}};
    for (int d = 0; d < dim; ++d) {
      b.lo[d] = center[d] - 0.5 * side;
      b.hi[d] = center[d] + 0.5 * side;
    }
    return b;
  }

  double side(int d) const { return hi[d] - lo[d]; }

  /// Largest side; for cubes this is the side length.
  double length() const {
    double l = 0.0;
    for (int d = 0; d < dim; ++d) l = std::max(l, side(d));
    return l;
  }

  double volume() const {
    double v = 1.0;
    for (int d = 0; d < dim; ++d) v *= side(d);
    return v;
  }

  Vec center() const {
    Vec c{};
    for (int d = 0; d < dim; ++d) c[d] = 0.5 * (lo[d] + hi[d]);
    return c;
  }

  Box scaled(double factor) const {
    Box b{dim, {}, {}};
    const Vec c = center();
    for (int d = 0; d < dim; ++d) {
      const double half = 0.5 * factor * side(d);
      b.lo[d] = c[d] - half;
      b.hi[d] = c[d] + half;
    }
    return b;
  }

  bool contains(const Vec& x, double tol = 0.0) const {
    for (int d = 0; d < dim; ++d)
      if (x[d] < lo[d] - tol || x[d] > hi[d] + tol) return false;
    return true;
  }

  bool contains(const Box& other, double tol = 0.0) const {
    for (int d = 0; d < dim; ++d)
      if (other.lo[d] < lo[d] - tol || other.hi[d] > hi[d] + tol) return false;
    return true;
  }

  /// sup of |y| over the box.
  double max_norm() const {
    Vec far{};
    for (int d = 0; d < dim; ++d) far[d] = std::max(std::abs(lo[d]), std::abs(hi[d]));
    return norm(far);
  }

  friend bool operator==(const Box&, const Box&) = default;
};

inline std::optional<Box> intersect(const Box& a, const Box& b) {
  require(a.dim == b.dim, "box dimension mismatch");
  Box r{a.dim, {}, {}};
  for (int d = 0; d < a.dim; ++d) {
    r.lo[d] = std::max(a.lo[d], b.lo[d]);
    r.hi[d] = std::min(a.hi[d], b.hi[d]);
    if (r.hi[d] < r.lo[d]) return std::nullopt;
  }
  return r;
}

inline std::ostream& operator<<(std::ostream& os, const Box& b) {
  os << '[';
  for (int d = 0; d < b.dim; ++d) {
    if (d) os << " x ";
    os << b.lo[d] << ',' << b.hi[d];
  }
  return os << ']';
}

}  // namespace varexp
