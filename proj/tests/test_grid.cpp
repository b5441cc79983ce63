#include <random>

#include <gtest/gtest.h>

#include "varexp/grid.hpp"

using namespace varexp;

TEST(Grid, CellSizeFromExtentAndCells) {
  const Grid g = make_grid(2, {0.0, 0.0}, {1.0, 1.0}, {4, 4});
  EXPECT_DOUBLE_EQ(g.cell_size()[0], 0.25);
  EXPECT_DOUBLE_EQ(g.cell_size()[1], 0.25);
  EXPECT_EQ(g.node_count(), 25u);
  EXPECT_EQ(g.cell_count(), 16u);
  const Grid g1 = make_grid(1, {0.0}, {2.0}, {8});
  EXPECT_DOUBLE_EQ(g1.cell_size()[0], 0.25);
  EXPECT_EQ(g1.nodes_per_axis()[0], 9);
}

TEST(Grid, RejectsInvalidInput) {
  EXPECT_THROW(make_grid(2, {0.0, 0.0}, {1.0, 1.0}, {1, 1}), Error);
  EXPECT_THROW(make_grid(2, {0.0, 0.0}, {1.0, -1.0}, {4, 4}), Error);
  EXPECT_THROW(make_grid(2, {0.0}, {1.0, 1.0}, {4, 4}), Error);
  EXPECT_THROW(make_grid(4, {0, 0, 0, 0}, {1, 1, 1, 1}, {2, 2, 2, 2}), Error);
}

TEST(Grid, NodeAndCellIndexingRoundTrip) {
  const Grid g = make_grid(3, {0.0, 0.0, 0.0}, {1.0, 2.0, 3.0}, {2, 3, 4});
  for (std::size_t i = 0; i < g.node_count(); ++i) EXPECT_EQ(g.node_linear(g.node_multi(i)), i);
  for (std::size_t c = 0; c < g.cell_count(); ++c) EXPECT_EQ(g.cell_linear(g.cell_multi(c)), c);
  // row-major: the last axis varies fastest
  EXPECT_EQ(g.node_linear({0, 0, 1}), 1u);
}

TEST(Gradient, ExactOnAffineFields) {
  for (int cells : {2, 5, 16}) {
    const Grid g = make_grid(2, {-1.0, 0.5}, {2.0, 3.0}, {cells, cells + 1});
    const GridFunction u = sample_nodes(g, [](const Vec& x) { return 3.0 * x[0] - 0.5 * x[1] + 7.0; });
    const CellField du = gradient(u);
    for (std::size_t c = 0; c < g.cell_count(); ++c) {
      EXPECT_NEAR(du(c, 0), 3.0, 1e-12);
      EXPECT_NEAR(du(c, 1), -0.5, 1e-12);
    }
  }
}

TEST(Gradient, ConstantGivesZero) {
  const Grid g = make_grid(3, {0, 0, 0}, {1, 1, 1}, {3, 3, 3});
  const GridFunction u = sample_nodes(g, [](const Vec&) { return 4.2; });
  for (double v : gradient(u).values) EXPECT_EQ(v, 0.0);
}

TEST(Gradient, BilinearAtCellCenters) {
  const Grid g = make_grid(2, {0.0, 0.0}, {1.0, 1.0}, {2, 2});
  const GridFunction u = sample_nodes(g, [](const Vec& x) { return x[0] * x[1]; });
  const CellField du = gradient(u);
  for (std::size_t c = 0; c < g.cell_count(); ++c) {
    const Vec x = g.cell_center(c);
    EXPECT_NEAR(du(c, 0), x[1], 1e-15);
    EXPECT_NEAR(du(c, 1), x[0], 1e-15);
  }
  EXPECT_NEAR(du(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(du(0, 1), 0.25, 1e-15);
}

TEST(Gradient, VectorValuedJacobian) {
  const Grid g = make_grid(2, {0.0, 0.0}, {1.0, 1.0}, {3, 3});
  GridFunction u(g, 2);
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    const Vec x = g.node_position(i);
    u(i, 0) = x[0] + 2.0 * x[1];
    u(i, 1) = -x[0];
  }
  const CellField du = gradient(u);
  ASSERT_EQ(du.components, 4);
  for (std::size_t c = 0; c < g.cell_count(); ++c) {
    EXPECT_NEAR(du(c, 0), 1.0, 1e-14);
    EXPECT_NEAR(du(c, 1), 2.0, 1e-14);
    EXPECT_NEAR(du(c, 2), -1.0, 1e-14);
    EXPECT_NEAR(du(c, 3), 0.0, 1e-14);
  }
}

TEST(Integrate, ConstantsAndHalves) {
  const Grid g = make_grid(2, {0.0, 0.0}, {1.0, 1.0}, {4, 4});
  CellField one(g, 1), two(g, 1);
  std::fill(one.values.begin(), one.values.end(), 1.0);
  std::fill(two.values.begin(), two.values.end(), 2.0);
  EXPECT_NEAR(integrate(one, g.domain()), 1.0, 1e-15);
  EXPECT_NEAR(integrate(two, Box{2, {0.0, 0.0}, {0.5, 1.0}}), 1.0, 1e-15);
}

TEST(Integrate, CellCenterCoordinateSumsToHalf) {
  const Grid g = make_grid(2, {0.0, 0.0}, {1.0, 1.0}, {4, 4});
  const CellField f = sample_cells(g, [](const Vec& x) { return x[0]; });
  double brute = 0.0;
  for (std::size_t c = 0; c < 16; ++c) brute += g.cell_center(c)[0] / 16.0;
  EXPECT_NEAR(brute, 0.5, 1e-15);
  EXPECT_NEAR(integrate(f, g.domain()), 0.5, 1e-15);
}

TEST(Integrate, PartialCellsCountByOverlap) {
  const Grid g = make_grid(1, {0.0}, {1.0}, {4});
  CellField f(g, 1);
  f.values = {1.0, 2.0, 3.0, 4.0};
  // [0.1, 0.6]: 0.15 of cell 0, all of cell 1, 0.1 of cell 2
  EXPECT_NEAR(integrate(f, Box{1, {0.1}, {0.6}}), 0.15 * 1 + 0.25 * 2 + 0.1 * 3, 1e-14);
  EXPECT_NEAR(mean(f, Box{1, {0.1}, {0.6}}), (0.15 + 0.5 + 0.3) / 0.5, 1e-14);
}

TEST(Integrate, RegionOutsideDomainIsAnError) {
  const Grid g = make_grid(2, {0.0, 0.0}, {1.0, 1.0}, {4, 4});
  CellField f(g, 1);
  EXPECT_THROW(integrate(f, Box{2, {2.0, 2.0}, {3.0, 3.0}}), Error);
}

TEST(IntegrateProperty, LinearityAndAdditivity) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  const Grid g = make_grid(2, {-1.0, -1.0}, {2.0, 2.0}, {13, 9});
  for (int trial = 0; trial < 50; ++trial) {
    CellField f(g, 1), h(g, 1), comb(g, 1);
    const double a = U(rng), b = U(rng);
    for (std::size_t c = 0; c < g.cell_count(); ++c) {
      f.values[c] = U(rng);
      h.values[c] = U(rng);
      comb.values[c] = a * f.values[c] + b * h.values[c];
    }
    Box region{2, {0.45 * U(rng) - 0.45, 0.45 * U(rng) - 0.45}, {}};
    for (int d = 0; d < 2; ++d) region.hi[d] = region.lo[d] + 0.3 + 0.35 * (U(rng) + 1.0);
    const double lhs = integrate(comb, region);
    const double rhs = a * integrate(f, region) + b * integrate(h, region);
    EXPECT_NEAR(lhs, rhs, 1e-13);
    const double cut = 0.5 * (region.lo[0] + region.hi[0]) + 0.1 * U(rng);
    Box left = region, right = region;
    left.hi[0] = cut;
    right.lo[0] = cut;
    EXPECT_NEAR(integrate(f, left) + integrate(f, right), integrate(f, region), 1e-13);
  }
}

TEST(GradientProperty, AffineExactOnRandomGrids) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(-2.0, 2.0);
  std::uniform_int_distribution<int> cells(2, 9);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + trial % 3;
    std::vector<double> o(n), e(n), slope(n);
    std::vector<int> c(n);
    for (int d = 0; d < n; ++d) {
      o[d] = U(rng);
      e[d] = 0.5 + std::abs(U(rng));
      c[d] = cells(rng);
      slope[d] = U(rng);
    }
    const Grid g = make_grid(n, o, e, c);
    const GridFunction u = sample_nodes(g, [&](const Vec& x) {
      double v = 1.0;
      for (int d = 0; d < n; ++d) v += slope[d] * x[d];
      return v;
    });
    const CellField du = gradient(u);
    for (std::size_t cell = 0; cell < g.cell_count(); ++cell)
      for (int d = 0; d < n; ++d) EXPECT_NEAR(du(cell, d), slope[d], 1e-11);
  }
}
