#pragma once

#include <algorithm>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "varexp/geometry.hpp"
#include "varexp/grid.hpp"

namespace varexp {

using NamedValues = std::vector<std::pair<std::string, double>>;

/// One measured inequality lhs <= c * sum(rhs_components). Quantities that
/// are reported but not part of the right-hand sum go to extras.
struct EstimateRecord {
  std::string name;
  double lhs = 0.0;
  NamedValues rhs_components;
  double empirical_constant = 0.0;
  Box cube;
  IVec resolution{0, 0, 0};
  std::vector<std::string> flags;
  NamedValues extras;

  double rhs_total() const {
    double s = 0.0;
    for (const auto& [k, v] : rhs_components) s += v;
    return s;
  }

  /// Sets empirical_constant = lhs / rhs_total (0 when both vanish).
  void finalize() {
    const double r = rhs_total();
    if (r > 0.0)
      empirical_constant = lhs / r;
    else
      empirical_constant = lhs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  }

  double component(const std::string& key) const {
    for (const auto& [k, v] : rhs_components)
      if (k == key) return v;
    for (const auto& [k, v] : extras)
      if (k == key) return v;
    return std::numeric_limits<double>::quiet_NaN();
  }

  bool has_flag(const std::string& f) const { return std::find(flags.begin(), flags.end(), f) != flags.end(); }
};

inline EstimateRecord make_record(std::string name, const Box& cube, const Grid& grid) {
  EstimateRecord r;
  r.name = std::move(name);
  r.cube = cube;
  r.resolution = grid.cells_per_axis();
  if (!grid.domain().contains(cube.scaled(2.0), 1e-12)) r.flags.push_back("clipped");
  return r;
}

}  // namespace varexp
