#include <gtest/gtest.h>

#include "mvlov/grid.hpp"

using namespace mvlov;

TEST(Grid, IndexRoundTrip) {
  const Grid g({-1.0, 0.0, 2.0}, {1.0, 3.0, 4.0}, {4, 5, 6});
  EXPECT_EQ(g.size(), 120u);
  std::vector<std::size_t> idx(3);
  for (std::size_t c = 0; c < g.size(); ++c) {
    g.unflatten(c, idx);
    EXPECT_EQ(g.flatten(idx), c);
  }
  EXPECT_EQ(g.stride(2), 1u);
  EXPECT_EQ(g.stride(0), 30u);
  std::vector<double> x(3);
  g.center_of(0, x);
  EXPECT_DOUBLE_EQ(x[0], -0.75);
  EXPECT_DOUBLE_EQ(x[1], 0.3);
  EXPECT_NEAR(g.cell_volume(), 0.5 * 0.6 * (2.0 / 6.0), 1e-15);
}

TEST(Grid, Validation) {
  EXPECT_THROW(Grid({0.0}, {0.0}, {4}), ValidationError);
  EXPECT_THROW(Grid({0.0}, {1.0}, {0}), ValidationError);
  EXPECT_THROW(Grid({0.0, 1.0}, {1.0}, {4}), ValidationError);
}

TEST(GridDensity, InterpolationIsExactForLinear) {
  const Grid g = Grid::cube(2, 0.0, 1.0, 10);
  GridDensity f(g);
  std::vector<double> x(2);
  for (std::size_t c = 0; c < g.size(); ++c) {
    g.center_of(c, x);
    f.values[c] = 2.0 * x[0] + 3.0 * x[1] + 1.0;
  }
  const std::vector<double> p{0.37, 0.61};
  EXPECT_NEAR(f.at(p), 2.0 * 0.37 + 3.0 * 0.61 + 1.0, 1e-13);
  EXPECT_EQ(f.at(std::vector<double>{1.5, 0.5}), 0.0);
}

TEST(GridDensity, MassOfUniform) {
  const Grid g = Grid::cube(2, -1.0, 1.0, 16);
  GridDensity f(g, std::vector<double>(g.size(), 0.25));
  EXPECT_NEAR(f.mass(), 1.0, 1e-14);
}

TEST(VectorField, ConstantExtensionOutside) {
  const Grid g = Grid::cube(1, 0.0, 1.0, 4);
  VectorField v(g);
  for (std::size_t c = 0; c < 4; ++c) v.values[c] = static_cast<double>(c);
  std::vector<double> out(1);
  v.at(std::vector<double>{5.0}, out);
  EXPECT_EQ(out[0], 3.0);
  v.at(std::vector<double>{-5.0}, out);
  EXPECT_EQ(out[0], 0.0);
  EXPECT_EQ(v.sup_norm(), 3.0);
}

TEST(SpaceTimeFunction, SliceLookup) {
  const Grid g = Grid::cube(1, 0.0, 1.0, 2);
  SpaceTimeFunction f(g, 0.5, 3);
  for (std::size_t k = 0; k < 3; ++k)
    for (double& v : f.slice(k)) v = static_cast<double>(k);
  EXPECT_EQ(f.slice_at(0.0), 0u);
  EXPECT_EQ(f.slice_at(0.74), 1u);
  EXPECT_EQ(f.slice_at(10.0), 2u);
  EXPECT_EQ(f.at(0.6, std::vector<double>{0.5}), 1.0);
}
