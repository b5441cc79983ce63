#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "varexp/exponent.hpp"

using namespace varexp;

namespace {

ExponentField radial(const Grid& g, double base, double slope) {
  return exponent_from(g, [&](const Vec& x) { return base + slope * norm(x); });
}

}  // namespace

TEST(ExponentField, RangeMatchesStoredValues) {
  const Grid g = make_grid(2, {-1.0, -1.0}, {2.0, 2.0}, {8, 8});
  const ExponentField p = radial(g, 1.5, 0.5);
  double lo = 1e9, hi = -1e9;
  for (double v : p.field().values) lo = std::min(lo, v), hi = std::max(hi, v);
  EXPECT_EQ(p.p_minus(), lo);
  EXPECT_EQ(p.p_plus(), hi);
  EXPECT_NEAR(p.p_plus(), 1.5 + 0.5 * std::sqrt(2.0), 1e-14);
}

TEST(ExponentField, CellValuesInterpolateNodes) {
  const Grid g = make_grid(2, {0.0, 0.0}, {1.0, 1.0}, {4, 4});
  const ExponentField p = exponent_from(g, [](const Vec& x) { return 2.0 + x[0] + 0.5 * x[1]; });
  for (std::size_t c = 0; c < g.cell_count(); ++c) {
    const Vec x = g.cell_center(c);
    EXPECT_NEAR(p.at_cell(c), 2.0 + x[0] + 0.5 * x[1], 1e-14);
    EXPECT_NEAR(p.value_at(x), p.at_cell(c), 1e-14);
  }
}

TEST(ExponentField, FromCellsKeepsCellValues) {
  const Grid g = make_grid(1, {0.0}, {1.0}, {4});
  const ExponentField p = ExponentField::from_cells(g, {1.5, 1.5, 2.5, 2.5});
  EXPECT_EQ(p.at_cell(0), 1.5);
  EXPECT_EQ(p.at_cell(3), 2.5);
  EXPECT_DOUBLE_EQ(p.at_node(2), 2.0);
  EXPECT_TRUE(p.cell_defined());
}

TEST(LogHolder, ConstantExponentHasZeroConstant) {
  const Grid g = make_grid(2, {0.0, 0.0}, {1.0, 1.0}, {6, 6});
  const LogHolderReport r = log_holder_constant(constant_exponent(g, 2.0));
  EXPECT_EQ(r.c_log, 0.0);
  EXPECT_EQ(r.c_log_local, 0.0);
}

TEST(LogHolder, TwoNodeClosedForm) {
  const std::vector<Vec> pts{Vec{0.0, 0.0, 0.0}, Vec{1.0, 0.0, 0.0}};
  const std::vector<double> p{2.0, 2.5};
  const LogHolderReport r = log_holder_constant_points(pts, p, std::nullopt);
  EXPECT_NEAR(r.c_log_local, 0.1 * std::log(std::numbers::e + 1.0), 1e-15);
  EXPECT_FALSE(r.c_log_decay.has_value());
  EXPECT_EQ(r.c_log, r.c_log_local);
  EXPECT_NEAR(r.p_scale_bound, 2.5 * 2.5 * r.c_log, 1e-15);
}

TEST(LogHolder, DecayPartAgainstPInfinity) {
  const std::vector<Vec> pts{Vec{0.0, 0.0, 0.0}, Vec{3.0, 4.0, 0.0}};
  const std::vector<double> p{2.0, 2.5};
  const LogHolderReport r = log_holder_constant_points(pts, p, 2.0);
  ASSERT_TRUE(r.c_log_decay.has_value());
  EXPECT_NEAR(*r.c_log_decay, 0.1 * std::log(std::numbers::e + 5.0), 1e-15);
  EXPECT_EQ(r.c_log, std::max(r.c_log_local, *r.c_log_decay));
}

TEST(LogHolder, LogModulusExponentStableUnderRefinement) {
  const Vec x0{0.5, 0.5, 0.0};
  auto field = [&](int cells) {
    const Grid g = make_grid(2, {0.0, 0.0}, {1.0, 1.0}, {cells, cells});
    return exponent_from(g, [&](const Vec& x) {
      const double r = distance(x, x0);
      return r == 0.0 ? 2.0 : 2.0 + 1.0 / std::log(std::numbers::e + 1.0 / r);
    });
  };
  const double c16 = log_holder_constant(field(16)).c_log;
  const double c32 = log_holder_constant(field(32)).c_log;
  EXPECT_GT(c16, 0.0);
  EXPECT_LT(std::abs(c32 / c16 - 1.0), 0.10);
}

TEST(LogHolder, SubsamplesAboveBudget) {
  const Grid g = make_grid(2, {0.0, 0.0}, {1.0, 1.0}, {10, 10});
  const ExponentField p = radial(g, 2.0, 0.3);
  const LogHolderReport full = log_holder_constant(p);
  const LogHolderReport sub = log_holder_constant(p, {1000, 3});
  EXPECT_FALSE(full.subsampled);
  EXPECT_TRUE(sub.subsampled);
  EXPECT_EQ(sub.pairs_examined, 1000u);
  EXPECT_LE(sub.c_log_local, full.c_log_local);
  EXPECT_EQ(log_holder_constant(p, {1000, 3}).c_log_local, sub.c_log_local);
}

TEST(LogHolderProperty, LocalPartInvariantUnderReciprocalShift) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(1.5, 3.0);
  const Grid g = make_grid(2, {0.0, 0.0}, {1.0, 1.0}, {5, 5});
  std::vector<double> v(g.node_count());
  for (double& x : v) x = U(rng);
  std::vector<double> shifted(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) shifted[i] = 1.0 / (1.0 / v[i] - 0.05);
  const auto pts = node_positions(g);
  const auto a = log_holder_constant_points(pts, v, 2.0);
  const auto b = log_holder_constant_points(pts, shifted, 1.0 / (0.5 - 0.05));
  EXPECT_NEAR(a.c_log_local, b.c_log_local, 1e-12);
  EXPECT_NEAR(*a.c_log_decay, *b.c_log_decay, 1e-12);
}

TEST(ComparisonExponent, ConstantExponentFarthestCorner) {
  const Grid g = make_grid(2, {-2.0, -2.0}, {4.0, 4.0}, {8, 8});
  const auto c = select_comparison_exponent(Box{2, {0.0, 0.0}, {1.0, 1.0}}, constant_exponent(g, 3.0));
  EXPECT_EQ(c.p_j, 3.0);
  EXPECT_DOUBLE_EQ(c.y[0], 1.5);
  EXPECT_DOUBLE_EQ(c.y[1], 1.5);
}

TEST(ComparisonExponent, LexicographicTieBreak) {
  const Grid g = make_grid(2, {-2.0, -2.0}, {4.0, 4.0}, {8, 8});
  const auto c = select_comparison_exponent(Box::cube(2, Vec{0.0, 0.0, 0.0}, 1.0), constant_exponent(g, 3.0));
  // four corners of 2Q = [-1,1]^2 tie; the smallest coordinates win
  EXPECT_DOUBLE_EQ(c.y[0], -1.0);
  EXPECT_DOUBLE_EQ(c.y[1], -1.0);
}

TEST(ComparisonExponent, RadialExponentTakesMaximumOver2Q) {
  const Grid g = make_grid(2, {-2.0, -2.0}, {4.0, 4.0}, {16, 16});
  const ExponentField p = radial(g, 1.8, 0.4);
  const Box q = Box::cube(2, Vec{0.0, 0.0, 0.0}, 1.0);
  const auto c = select_comparison_exponent(q, p);
  double best = 0.0, pmax = 0.0;
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    const Vec x = g.node_position(i);
    if (q.scaled(2.0).contains(x, 1e-12)) best = std::max(best, norm(x)), pmax = std::max(pmax, p.at_node(i));
  }
  EXPECT_NEAR(norm(c.y), best, 1e-14);
  EXPECT_DOUBLE_EQ(c.p_j, pmax);
}

TEST(ComparisonExponent, ClipsDoubledCubeToDomain) {
  const Grid g = make_grid(2, {0.0, 0.0}, {1.0, 1.0}, {8, 8});
  const ExponentField p = exponent_from(g, [](const Vec& x) { return 2.0 + x[0] * x[1]; });
  const auto c = select_comparison_exponent(Box{2, {0.5, 0.5}, {1.0, 1.0}}, p);
  EXPECT_DOUBLE_EQ(c.y[0], 1.0);
  EXPECT_DOUBLE_EQ(c.y[1], 1.0);
  EXPECT_DOUBLE_EQ(c.p_j, 3.0);
  EXPECT_THROW(select_comparison_exponent(Box{2, {5.0, 5.0}, {6.0, 6.0}}, p), Error);
}

TEST(ComparisonExponentProperty, ScanAgreesOnRandomCubes) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> U(-1.5, 1.5), side(0.1, 1.0);
  const Grid g = make_grid(2, {-2.0, -2.0}, {4.0, 4.0}, {20, 20});
  const ExponentField p = exponent_from(g, [](const Vec& x) { return 2.0 + 0.3 * std::sin(2 * x[0]) * x[1]; });
  for (int t = 0; t < 100; ++t) {
    const Box q = Box::cube(2, Vec{U(rng), U(rng), 0.0}, side(rng));
    const auto c = select_comparison_exponent(q, p);
    const Box q2 = *intersect(q.scaled(2.0), g.domain());
    const auto [lo, hi] = exponent_range(p, q2);
    EXPECT_GE(c.p_j, lo);
    EXPECT_LE(c.p_j, hi);
    for (std::size_t i = 0; i < g.node_count(); ++i)
      if (q2.contains(g.node_position(i), 1e-10)) EXPECT_GE(norm(c.y), norm(g.node_position(i)) - 1e-12);
  }
}

TEST(Oscillation, ConstantIsZero) {
  const Grid g = make_grid(2, {0.0, 0.0}, {1.0, 1.0}, {8, 8});
  EXPECT_EQ(oscillation_average(Box{2, {0.0, 0.0}, {0.5, 0.5}}, constant_exponent(g, 2.5), 1.0).value, 0.0);
}

TEST(Oscillation, LinearExponentClosedForm) {
  const Grid g = make_grid(1, {0.0}, {1.0}, {64});
  const ExponentField p = exponent_from(g, [](const Vec& x) { return 2.0 + x[0]; });
  const OscillationReport r = oscillation_average(Box{1, {0.0}, {1.0}}, p, 1.0);
  EXPECT_DOUBLE_EQ(r.comparison.p_j, 3.0);
  EXPECT_NEAR(r.value, 0.5, 1e-13);
  EXPECT_THROW(oscillation_average(Box{1, {0.0}, {1.0}}, p, 0.5), Error);
}

TEST(OscillationProperty, MonotoneInSAndBoundedByRange) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> U(1.2, 3.5);
  const Grid g = make_grid(2, {-1.0, -1.0}, {2.0, 2.0}, {8, 8});
  for (int t = 0; t < 20; ++t) {
    GridFunction f(g, 1);
    for (double& v : f.values) v = U(rng);
    const ExponentField p(f);
    const Box q = Box::cube(2, Vec{0.2 * U(rng) - 0.5, 0.1, 0.0}, 0.4 + 0.1 * U(rng));
    const auto [lo, hi] = exponent_range(p, *intersect(q.scaled(2.0), g.domain()));
    double prev = 0.0;
    for (double s : {1.0, 1.5, 2.0, 4.0}) {
      const double v = oscillation_average(q, p, s, 1.0).value;
      EXPECT_GE(v, prev - 1e-14);
      EXPECT_LE(v, hi - lo + 1e-14);
      prev = v;
    }
  }
}

TEST(VanishingProfile, ConstantAttainsEveryEpsilon) {
  const Grid g = make_grid(2, {0.0, 0.0}, {1.0, 1.0}, {5, 5});
  const std::vector<double> eps{1.0, 0.1, 0.01};
  for (const auto& e : vanishing_profile(constant_exponent(g, 2.0), eps)) {
    ASSERT_TRUE(e.r.has_value());
    EXPECT_NEAR(*e.r, std::sqrt(2.0), 1e-12);
    ASSERT_TRUE(e.R.has_value());
    EXPECT_EQ(*e.R, 0.0);
  }
}

TEST(VanishingProfile, SteepTransitionLosesSmallEpsilons) {
  const Grid g = make_grid(1, {0.0}, {1.0}, {16});
  const ExponentField p = exponent_from(g, [](const Vec& x) { return 2.0 + 0.5 * std::tanh(200.0 * (x[0] - 0.5)); });
  const std::vector<double> eps{10.0, 1e-2};
  const auto prof = vanishing_profile(p, eps);
  EXPECT_TRUE(prof[0].r.has_value());
  EXPECT_FALSE(prof[1].r.has_value());
}

TEST(VanishingProfile, DecayRadiusMatchesDirectScan) {
  const Grid g = make_grid(2, {0.0, 0.0}, {40.0, 40.0}, {20, 20});
  const double c = 1.0;
  const ExponentField p =
      exponent_from(g, [&](const Vec& x) { return 2.0 + c / std::pow(std::log(std::numbers::e + norm(x)), 2); }, 2.0);
  const std::vector<double> eps{0.5, 0.4, 0.3};
  const auto prof = vanishing_profile(p, eps);
  double prev_R = 0.0;
  for (const auto& e : prof) {
    ASSERT_TRUE(e.R.has_value());
    // the far-field condition alone needs log(e + R) >= c / eps
    const double continuum = std::exp(c / e.epsilon) - std::numbers::e;
    EXPECT_GE(*e.R, continuum - 2.0 * std::sqrt(2.0));
    // direct scan: every node at radius >= R satisfies the decay bound
    for (std::size_t i = 0; i < g.node_count(); ++i) {
      const double r = norm(g.node_position(i));
      if (r >= *e.R) EXPECT_LE(std::abs(p.at_node(i) - 2.0) * std::log(std::numbers::e + r), e.epsilon + 1e-12);
    }
    EXPECT_GE(*e.R, prev_R);
    prev_R = *e.R;
  }
}
