#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mvlov/density.hpp"
#include "mvlov/fpe.hpp"

using namespace mvlov;

namespace {

double linf_rel(const GridDensity& a, const GridDensity& b) {
  double err = 0.0, peak = 0.0;
  for (std::size_t c = 0; c < a.values.size(); ++c) {
    err = std::max(err, std::abs(a.values[c] - b.values[c]));
    peak = std::max(peak, std::abs(b.values[c]));
  }
  return err / peak;
}

FpeResult heat_run(double h, double T) {
  FpeConfig cfg;
  const auto n = static_cast<std::size_t>(std::lround(16.0 / h));
  cfg.grid = Grid::cube(1, -8.0, 8.0, n);
  cfg.T = T;
  cfg.kernel = KernelSpec::zero();
  cfg.initial = gaussian_density(cfg.grid, std::vector<double>{0.0}, 0.09);
  return fpe_solve(cfg);
}

}  // namespace

TEST(Convolve, SingleSource) {
  const Grid g = Grid::cube(2, -2.0, 2.0, 21);
  GridDensity rho(g);
  const std::size_t src = g.flatten(std::vector<std::size_t>{10, 10});
  rho.values[src] = 1.0 / g.cell_volume();
  const auto k = KernelSpec::power_law(1.0, 1.5);
  const auto B = convolve_drift(rho, k);
  std::vector<double> x(2), y(2);
  g.center_of(src, y);
  for (std::size_t c : {g.flatten(std::vector<std::size_t>{15, 10}), g.flatten(std::vector<std::size_t>{2, 17})}) {
    g.center_of(c, x);
    const auto b = k.eval(0.0, x, y);
    EXPECT_NEAR(B.values[c * 2], b[0], 2e-3 * std::abs(b[0]) + 1e-12);
    EXPECT_NEAR(B.values[c * 2 + 1], b[1], 2e-3 * std::abs(b[1]) + 1e-12);
  }
  // The source cell itself feels nothing from its own mass.
  EXPECT_EQ(B.values[src * 2], 0.0);
}

TEST(Convolve, SymmetricDensityCancelsAtOrigin) {
  const Grid g = Grid::cube(2, -3.0, 3.0, 31);
  const auto rho = gaussian_density(g, std::vector<double>{0.0, 0.0}, 0.5);
  for (const auto& k : {KernelSpec::power_law(1.0, 1.5), KernelSpec::power_law(0.5, 1.0, Direction::rotational)}) {
    const auto B = convolve_drift(rho, k);
    std::vector<double> out(2);
    const std::size_t mid = g.flatten(std::vector<std::size_t>{15, 15});
    EXPECT_NEAR(B.values[mid * 2], 0.0, 1e-10);
    EXPECT_NEAR(B.values[mid * 2 + 1], 0.0, 1e-10);
  }
}

TEST(Convolve, ConstantKernel) {
  const Grid g = Grid::cube(2, -1.0, 1.0, 12);
  const auto rho = gaussian_density(g, std::vector<double>{0.1, 0.0}, 0.2);
  const double mass = rho.mass();
  const auto B = convolve_drift(rho, KernelSpec::constant({0.7, 0.0}));
  for (std::size_t c = 0; c < g.size(); ++c) {
    ASSERT_NEAR(B.values[c * 2], 0.7 * mass, 1e-12);
    ASSERT_NEAR(B.values[c * 2 + 1], 0.0, 1e-15);
  }
}

TEST(Convolve, GeneralKernelUsesMidpointSum) {
  const Grid g = Grid::cube(1, 0.0, 1.0, 8);
  BoundedTable tab;
  tab.fn = [](double, std::span<const double> x, std::span<const double> y, std::span<double> out) {
    out[0] = x[0] * y[0];
  };
  tab.bound = 1.0;
  const KernelSpec k(tab);
  GridDensity rho(g, std::vector<double>(8, 1.0));
  const auto B = convolve_drift(rho, k);
  // x * sum_j y_j h over every cell: a bounded kernel has no diagonal to drop.
  for (std::size_t i = 0; i < 8; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 8; ++j) s += g.center(0, i) * g.center(0, j) * g.spacing(0);
    EXPECT_NEAR(B.values[i], s, 1e-14);
  }
}

TEST(Fpe, HeatEquationGaussian) {
  const auto res = heat_run(1.0 / 256, 0.5);
  const Grid& g = res.snapshots.back().second.grid;
  const auto exact = gaussian_density(g, std::vector<double>{0.0}, 0.09 + 1.0);
  EXPECT_LE(linf_rel(res.snapshots.back().second, exact), 0.01);
  EXPECT_LE(res.max_mass_drift, 1e-10);
}

TEST(Fpe, MatchesHeatSemigroup) {
  const auto res = heat_run(1.0 / 64, 0.3);
  const auto& rho = res.snapshots.back().second;
  const auto via_semigroup = heat_semigroup(Measure(gaussian_density(rho.grid, std::vector<double>{0.0}, 0.09)),
                                            2 * 0.3, rho.grid);
  EXPECT_LE(linf_rel(rho, via_semigroup), 0.01);
}

TEST(Fpe, SecondOrderInSpace) {
  const double T = 0.25;
  double errs[2];
  for (int r = 0; r < 2; ++r) {
    const auto res = heat_run(1.0 / (16 << r), T);
    const auto& rho = res.snapshots.back().second;
    errs[r] = linf_rel(rho, gaussian_density(rho.grid, std::vector<double>{0.0}, 0.09 + 2 * T));
  }
  const double ratio = errs[0] / errs[1];
  EXPECT_GE(ratio, 3.4);
  EXPECT_LE(ratio, 4.6);
}

TEST(Fpe, MassAndPositivityWithDrift) {
  for (auto bc : {Boundary::no_flux, Boundary::periodic}) {
    FpeConfig cfg;
    cfg.grid = Grid::cube(2, -3.0, 3.0, 24);
    cfg.T = 0.2;
    cfg.kernel = KernelSpec::power_law(1.0, 1.5).truncate(5.0);
    cfg.boundary = bc;
    cfg.initial = gaussian_density(cfg.grid, std::vector<double>{0.3, 0.0}, 0.3);
    cfg.snapshot_times = {0.1, 0.2};
    const auto res = fpe_solve(cfg);
    EXPECT_LE(res.max_mass_drift, 1e-10);
    EXPECT_GE(res.min_value, 0.0);
    EXPECT_EQ(res.snapshots.size(), 2u);
  }
}

TEST(Fpe, RejectsUnstableStepAndUntruncatedKernel) {
  FpeConfig cfg;
  cfg.grid = Grid::cube(1, -1.0, 1.0, 20);
  cfg.kernel = KernelSpec::zero();
  cfg.initial = gaussian_density(cfg.grid, std::vector<double>{0.0}, 0.1);
  cfg.dt = 1.0;
  EXPECT_THROW(fpe_solve(cfg), ValidationError);
  cfg.dt = 0.0;
  cfg.kernel = KernelSpec::power_law(1.0, 1.5);
  EXPECT_THROW(fpe_solve(cfg), ValidationError);
}

TEST(Zvonkin, ZeroDrift) {
  const Grid g = Grid::cube(2, -1.0, 1.0, 8);
  const auto sol = zvonkin_solve(VectorField(g), 4.0, 1.0);
  EXPECT_EQ(sol.sup_u, 0.0);
  EXPECT_EQ(sol.sup_grad_u, 0.0);
  EXPECT_THROW(zvonkin_solve(VectorField(g), 0.5, 1.0), ValidationError);
}

TEST(Zvonkin, ConstantDriftOde) {
  const Grid g = Grid::cube(2, -1.0, 1.0, 8);
  VectorField b(g);
  const double c = 0.6, lambda = 4.0, T = 1.0;
  for (std::size_t i = 0; i < g.size(); ++i) b.values[i * 2] = c;
  ZvonkinOptions opt;
  opt.dt = 1e-4;
  const auto sol = zvonkin_solve(b, lambda, T, opt);
  const double exact = c / lambda * (1 - std::exp(-lambda * T));
  EXPECT_NEAR(sol.sup_u, exact, 1e-3 * exact);
  EXPECT_NEAR(sol.sup_grad_u, 0.0, 1e-12);
  EXPECT_EQ(sol.u.front().values[0], 0.0);  // terminal condition
}

TEST(Zvonkin, FeynmanKacDuality) {
  const Grid g = Grid::cube(1, -2.0, 2.0, 256);
  VectorField b(g);
  for (std::size_t i = 0; i < g.size(); ++i) b.values[i] = 0.8 * std::sin(std::numbers::pi * g.center(0, i) / 2.0);
  GridDensity rho0(g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double x = g.center(0, i);
    rho0.values[i] = x > -1.5 && x < 0.5 ? 0.5 : 0.0;
  }
  const double lambda = 1.0, T = 0.5;
  ZvonkinOptions opt;
  opt.dt = 1e-3;
  const auto pde = pde_pairing(zvonkin_solve(b, lambda, T, opt), rho0);
  const auto mc = feynman_kac_pairing(b, lambda, T, rho0, 10000, 1e-3, 42);
  EXPECT_NEAR(pde[0], mc[0].mean, 3 * mc[0].std_error) << pde[0] << " vs " << mc[0].mean;
}

TEST(Zvonkin, SmallnessDecreasesInLambda) {
  const Grid g = Grid::cube(2, -2.0, 2.0, 32);
  VectorField b(g);
  std::vector<double> x(2);
  for (std::size_t c = 0; c < g.size(); ++c) {
    g.center_of(c, x);
    b.values[c * 2] = std::clamp(-x[0] / std::max(norm(x), 1e-9), -3.0, 3.0);
    b.values[c * 2 + 1] = std::clamp(-x[1] / std::max(norm(x), 1e-9), -3.0, 3.0);
  }
  double prev = kInf;
  for (double lambda : {4.0, 16.0, 64.0, 256.0}) {
    const auto sol = zvonkin_solve(b, lambda, 1.0);
    const double s = sol.sup_u + sol.sup_grad_u;
    EXPECT_LE(s, prev);
    prev = s;
  }
  EXPECT_LT(prev, 0.5);
}

TEST(Interaction, FiniteForIntegrableKernel) {
  const Grid g = Grid::cube(2, -2.0, 2.0, 16);
  const auto rho = gaussian_density(g, std::vector<double>{0.0, 0.0}, 0.3);
  DensitySnapshots flow{{0.0, rho}, {0.5, rho}};
  const double v = interaction_integral(flow, KernelSpec::power_law(1.0, 1.5));
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_GT(v, 0.0);
  EXPECT_NEAR(interaction_integral(flow, KernelSpec::constant({1.0, 0.0})), 0.5 * rho.mass() * rho.mass(), 0.05);
}
