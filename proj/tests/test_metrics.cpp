#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mvlov/density.hpp"
#include "mvlov/metrics.hpp"

using namespace mvlov;

namespace {

std::vector<double> normals(std::size_t n, double mean, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(mean, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = nd(gen);
  return v;
}

// Brute-force OT for uniform n-atom sets: the optimum is a permutation (Birkhoff).
double brute_force_uniform(const std::vector<double>& a, const std::vector<double>& b, std::size_t n,
                           std::size_t d, double theta) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = kInf;
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double r2 = 0.0;
      for (std::size_t k = 0; k < d; ++k) r2 += std::pow(a[i * d + k] - b[perm[i] * d + k], 2);
      c += std::pow(std::sqrt(r2), theta) / static_cast<double>(n);
    }
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::pow(best, 1.0 / theta);
}

// Brute-force OT for 2 vs 3 weighted atoms: plans form a 2-parameter polytope;
// the optimum sits on a vertex, so enumerate a fine simplex grid including them.
double brute_force_small(const WeightedPoints& a, const WeightedPoints& b, double theta) {
  auto cost = [&](std::size_t i, std::size_t j) {
    double r2 = 0.0;
    for (std::size_t k = 0; k < a.d; ++k) r2 += std::pow(a.positions[i * a.d + k] - b.positions[j * b.d + k], 2);
    return std::pow(std::sqrt(r2), theta);
  };
  // Free variables: p00, p01 (row 0); the rest follow from the marginals.
  double best = kInf;
  const int steps = 2000;
  for (int u = 0; u <= steps; ++u)
    for (int v = 0; v <= steps - u; ++v) {
      const double p00 = a.weights[0] * u / steps, p01 = a.weights[0] * v / steps;
      const double p02 = a.weights[0] - p00 - p01;
      const double p10 = b.weights[0] - p00, p11 = b.weights[1] - p01, p12 = b.weights[2] - p02;
      if (p10 < -1e-15 || p11 < -1e-15 || p12 < -1e-15) continue;
      const double c = p00 * cost(0, 0) + p01 * cost(0, 1) + p02 * cost(0, 2) + p10 * cost(1, 0) +
                       p11 * cost(1, 1) + p12 * cost(1, 2);
      best = std::min(best, c);
    }
  return std::pow(best, 1.0 / theta);
}

}  // namespace

TEST(Wasserstein1d, PointMasses) {
  for (double theta : {1.0, 2.0, 3.5})
    EXPECT_DOUBLE_EQ(wasserstein_1d(std::vector<double>(5, 0.0), std::vector<double>(5, 1.0), theta), 1.0);
  const auto a = normals(100, 0.0, 1);
  EXPECT_EQ(wasserstein_1d(a, a, 2.0), 0.0);
  EXPECT_THROW(wasserstein_1d(a, normals(99, 0.0, 2)), ValidationError);
}

TEST(Wasserstein1d, ShiftedGaussians) {
  const auto a = normals(100000, 0.0, 3);
  const auto b = normals(100000, 0.5, 4);
  EXPECT_NEAR(wasserstein_1d(a, b, 2.0), 0.5, 0.01);
}

TEST(Wasserstein1d, MetricAxioms) {
  std::mt19937_64 gen(9);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = normals(64, 0.0, gen()), y = normals(64, 0.3, gen()), z = normals(64, -0.2, gen());
    for (double theta : {1.0, 2.0}) {
      const double xy = wasserstein_1d(x, y, theta), yx = wasserstein_1d(y, x, theta);
      EXPECT_NEAR(xy, yx, 1e-12);
      EXPECT_LE(wasserstein_1d(x, z, theta), xy + wasserstein_1d(y, z, theta) + 1e-9);
      EXPECT_GT(xy, 0.0);
    }
  }
}

TEST(Wasserstein1d, SamplesAgainstGridDensity) {
  // A single sample at 0 vs a uniform density on [0, 1]: W1 = 1/2.
  const Grid g = Grid::cube(1, 0.0, 1.0, 10);
  const GridDensity u(g, std::vector<double>(10, 1.0));
  EXPECT_NEAR(wasserstein_1d(std::vector<double>{0.0}, u), 0.5, 1e-12);
  // Uniform on [0, 1] vs uniform on [0, 1] shifted one cell on a wider grid.
  const Grid g2 = Grid::cube(1, 0.0, 2.0, 20);
  GridDensity a(g2), b(g2);
  for (std::size_t i = 0; i < 10; ++i) a.values[i] = 1.0;
  for (std::size_t i = 1; i < 11; ++i) b.values[i] = 1.0;
  EXPECT_NEAR(wasserstein_1d(a, b), 0.1, 1e-12);
}

TEST(WassersteinDiscrete, HandCases) {
  const auto a = WeightedPoints::uniform(2, {0.0, 0.0, 1.0, 0.0});
  const auto swapped = WeightedPoints::uniform(2, {1.0, 0.0, 0.0, 0.0});
  EXPECT_NEAR(wasserstein_discrete(a, swapped), 0.0, 1e-15);
  const auto up = WeightedPoints::uniform(2, {0.0, 1.0, 1.0, 1.0});
  EXPECT_NEAR(wasserstein_discrete(a, up), 1.0, 1e-15);
}

TEST(WassersteinDiscrete, MatchesPermutationBruteForce) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(16), b(16);
    for (auto& v : a) v = u(gen);
    for (auto& v : b) v = u(gen);
    for (double theta : {1.0, 2.0}) {
      const double exact = brute_force_uniform(a, b, 8, 2, theta);
      EXPECT_NEAR(wasserstein_discrete(WeightedPoints::uniform(2, a), WeightedPoints::uniform(2, b), theta), exact,
                  1e-9);
    }
  }
}

TEST(WassersteinDiscrete, MatchesPlanEnumerationForUnequalWeights) {
  std::mt19937_64 gen(13);
  std::uniform_real_distribution<double> u(-1.0, 1.0), w(0.1, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    WeightedPoints a, b;
    a.d = b.d = 2;
    for (int i = 0; i < 4; ++i) a.positions.push_back(u(gen));
    for (int i = 0; i < 6; ++i) b.positions.push_back(u(gen));
    // weights on a 1/20 lattice so the plan grid contains every vertex
    const double a0 = std::round(w(gen) * 10) / 20.0;
    a.weights = {a0, 1.0 - a0};
    b.weights = {0.25, 0.35, 0.40};
    const double exact = brute_force_small(a, b, 1.0);
    EXPECT_NEAR(wasserstein_discrete(a, b, 1.0), exact, 1e-9);
  }
}

TEST(WassersteinDiscrete, Validation) {
  const auto big = WeightedPoints::uniform(1, std::vector<double>(kMaxTransportAtoms + 1, 0.0));
  EXPECT_THROW(wasserstein_discrete(big, big), ValidationError);
  WeightedPoints bad = WeightedPoints::uniform(1, {0.0, 1.0});
  bad.weights = {0.5, 0.6};
  EXPECT_THROW(wasserstein_discrete(bad, bad), ValidationError);
}

TEST(WeightedTv, Examples) {
  const Grid g = Grid::cube(2, -3.0, 3.0, 6);  // unit cells centred at half-integers
  GridDensity a(g), b(g);
  EXPECT_EQ(weighted_tv(a, a, 2.0), 0.0);
  a.values[g.flatten(std::vector<std::size_t>{0, 0})] = 1.0;
  b.values[g.flatten(std::vector<std::size_t>{5, 5})] = 1.0;
  EXPECT_DOUBLE_EQ(weighted_tv(a, b, 0.0), 2.0);

  // Cells centred at (2, 0) and at the origin.
  const Grid h = Grid::cube(2, -0.5, 2.5, 3);
  GridDensity p(h), q(h);
  p.values[h.flatten(std::vector<std::size_t>{2, 0})] = 1.0;
  q.values[h.flatten(std::vector<std::size_t>{0, 0})] = 1.0;
  EXPECT_NEAR(weighted_tv(p, q, 2.0), 6.0, 1e-12);
}

TEST(WeightedTv, NondecreasingInThetaOutsideUnitBall) {
  const Grid g = Grid::cube(2, -4.0, 4.0, 32);
  GridDensity a(g), b(g);
  std::vector<double> x(2);
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t c = 0; c < g.size(); ++c) {
    g.center_of(c, x);
    if (norm(x) < 1.0) continue;
    a.values[c] = u(gen);
    b.values[c] = u(gen);
  }
  double prev = 0.0;
  for (double theta : {0.0, 0.5, 1.0, 2.0, 3.0}) {
    const double v = weighted_tv(a, b, theta);
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(LocalizedNorm, ConstantMatchesCutoffNorm) {
  const Grid g = Grid::cube(2, -4.0, 4.0, 160);
  const auto one = SpaceTimeFunction::from_fn(g, [](std::span<const double>) { return 1.0; });
  NormSpec spec;
  spec.p = 3.0;
  const double v = localized_norm(one, spec, 1.0);
  const double ref = cutoff_lp_norm(2, 3.0, 1.0, {192, 256});
  EXPECT_NEAR(v, ref, 0.01 * ref);
  spec.q = 4.0;
  EXPECT_NEAR(localized_norm(one, spec, 2.0), ref * std::pow(2.0, 0.25), 0.01 * ref);
}

TEST(LocalizedNorm, ZeroFunction) {
  const Grid g = Grid::cube(1, -2.0, 2.0, 40);
  EXPECT_EQ(localized_norm(SpaceTimeFunction(g, 0.0, 1), NormSpec{}, 1.0), 0.0);
}

TEST(LocalizedNorm, CompactSupportMatchesGlobalNorm) {
  const Grid g = Grid::cube(2, -3.0, 3.0, 120);
  const auto f = SpaceTimeFunction::from_fn(g, [](std::span<const double> x) {
    const double r = norm(x);
    return r < 0.4 ? 1.0 - r / 0.4 : 0.0;
  });
  NormSpec spec;
  spec.p = 2.0;
  double global = 0.0;
  for (double v : f.values) global += v * v * g.cell_volume();
  global = std::sqrt(global);
  EXPECT_NEAR(localized_norm(f, spec, 1.0), global, 0.05 * global);
  spec.lattice = LatticeMode::unit_lattice;
  EXPECT_NEAR(localized_norm(f, spec, 1.0), global, 0.05 * global);
}

TEST(LocalizedNorm, BoundsAndHoelder) {
  const Grid g = Grid::cube(2, -3.0, 3.0, 60);
  std::mt19937_64 gen(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    SpaceTimeFunction f(g, 0.0, 1);
    for (double& v : f.values) v = u(gen);
    const double ball = std::numbers::pi * 4.0;  // |B_2| for r = 1, d = 2
    for (double p : {1.5, 2.0, 3.0}) {
      NormSpec sp;
      sp.p = p;
      double global = 0.0;
      for (double v : f.values) global += std::pow(v, p) * g.cell_volume();
      global = std::pow(global, 1.0 / p);
      const double lp = localized_norm(f, sp, 1.0);
      EXPECT_LE(lp, global + 1e-12);
      for (double pp : {p, 4.0, 6.0}) {
        if (pp < p) continue;
        NormSpec spp = sp;
        spp.p = pp;
        // discrete ball of cells within 2r carries at most |B_2| + a boundary layer
        const double vol = ball * 1.1;
        EXPECT_LE(lp, std::pow(vol, 1.0 / p - 1.0 / pp) * localized_norm(f, spp, 1.0) + 1e-9);
      }
    }
  }
}

TEST(MixedNorm, ZeroAndSeparable) {
  const Grid g = Grid::cube(2, -1.0, 1.0, 16);
  TwoPointFunction zero{[](double, std::span<const double>, std::span<const double>) { return 0.0; }};
  EXPECT_EQ(mixed_localized_norm(zero, g, 2.0, 2.0, 4.0, 1.0), 0.0);
  auto gx = [](std::span<const double> x) { return 1.0 + x[0] * x[0]; };
  TwoPointFunction sep{[&](double, std::span<const double> x, std::span<const double>) { return gx(x); }};
  const double T = 0.5, p1 = 3.0, q0 = 4.0;
  // sup_z ||1_{Q_z} g||_{p1} over the four unit cells of [-1, 1]^2
  double best = 0.0;
  for (const auto& cell : std::vector<std::pair<double, double>>{{-1, 0}, {0, 1}}) {
    double acc = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c) {
      std::vector<double> x(2);
      g.center_of(c, x);
      if (x[0] > cell.first && x[0] <= cell.second && x[1] > 0.0) acc += std::pow(gx(x), p1) * g.cell_volume();
    }
    best = std::max(best, std::pow(acc, 1.0 / p1));
  }
  EXPECT_NEAR(mixed_localized_norm(sep, g, p1, 2.0, q0, T), best * std::pow(T, 1.0 / q0), 1e-12);
}

TEST(MixedNorm, PowerLawEnvelopeFinite) {
  const Grid g = Grid::cube(2, -1.0, 1.0, 16);
  TwoPointFunction h{[](double, std::span<const double> x, std::span<const double> y) {
    const double r = std::hypot(x[0] - y[0], x[1] - y[1]);
    return r > 0.0 ? std::pow(r, -0.5) : 0.0;
  }};
  const double v = mixed_localized_norm(h, g, 3.0, 3.0, 1e6, 1.0);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_GT(v, 0.0);
}

TEST(Maximal, ConstantAndBound) {
  const Grid g = Grid::cube(2, 0.0, 1.0, 32);
  const GridDensity c(g, std::vector<double>(g.size(), 2.5));
  for (double v : maximal_function(c, 0.25).values) EXPECT_NEAR(v, 2.5, 1e-14);
  GridDensity f(g);
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double mx = 0.0;
  for (double& v : f.values) mx = std::max(mx, std::abs(v = u(gen)));
  for (double v : maximal_function(f, 0.25).values) EXPECT_LE(v, mx + 1e-15);
  EXPECT_THROW(maximal_function(f, 0.04), ValidationError);
}

TEST(Maximal, BallIndicator) {
  const double R = 1.0;
  const Grid g = Grid::cube(2, -3.0, 3.0, 241);  // a cell centre at 0
  GridDensity f(g);
  std::vector<double> x(2);
  for (std::size_t c = 0; c < g.size(); ++c) {
    g.center_of(c, x);
    f.values[c] = norm(x) <= R / 2 ? 1.0 : 0.0;
  }
  const auto m = maximal_function(f, R);
  const std::size_t centre = g.flatten(std::vector<std::size_t>{120, 120});
  EXPECT_NEAR(m.values[centre], 1.0, 1e-12);
  // At distance R from the ball's boundary (|x| = 1.5) only r = R reaches the
  // ball; overlap area of B_R(x) with B_{R/2} divided by |B_R|.
  const std::size_t far = g.flatten(std::vector<std::size_t>{120 + 60, 120});
  const double overlap = [] {
    // lens area of circles r1 = 1, r2 = 0.5 at distance 1.5 is zero: they touch.
    return 0.0;
  }();
  EXPECT_LT(m.values[far], 1.0);
  EXPECT_NEAR(m.values[far], overlap, 0.02);
  // At |x| = 1 the ladder's best radius is R: lens of radii 1 and 0.5 at distance 1.
  const std::size_t mid = g.flatten(std::vector<std::size_t>{120 + 40, 120});
  auto lens = [](double r1, double r2, double dd) {
    const double a1 = r1 * r1 * std::acos((dd * dd + r1 * r1 - r2 * r2) / (2 * dd * r1));
    const double a2 = r2 * r2 * std::acos((dd * dd + r2 * r2 - r1 * r1) / (2 * dd * r2));
    const double k = 0.5 * std::sqrt((-dd + r1 + r2) * (dd + r1 - r2) * (dd - r1 + r2) * (dd + r1 + r2));
    return a1 + a2 - k;
  };
  const double oracle = lens(1.0, 0.5, 1.0) / (std::numbers::pi * 1.0);
  EXPECT_NEAR(m.values[mid], oracle, 0.02 * oracle);
}

namespace {

Trajectory path_run(std::size_t N, double dt, double T, std::uint64_t seed, NoiseMode noise = NoiseMode::gaussian) {
  SimConfig cfg;
  cfg.N = N;
  cfg.d = 2;
  cfg.dt = dt;
  cfg.T = T;
  cfg.kernel = KernelSpec::zero();
  cfg.seed = seed;
  cfg.noise = noise;
  cfg.record_path = true;
  return *simulate(cfg).path;
}

}  // namespace

TEST(Krylov, ConstantTest) {
  const auto tr = path_run(100, 0.01, 0.5, 1);
  const Grid g = Grid::cube(2, -8.0, 8.0, 128);
  KrylovTest one{"one", SpaceTimeFunction::from_fn(g, [](std::span<const double>) { return 1.0; })};
  NormSpec spec;
  spec.p = 3.0;
  spec.q = 4.0;
  const auto rep = krylov_check({&tr}, {one}, spec);
  EXPECT_NEAR(rep.per_test[0].lhs, 0.5, 1e-12);
  const double chi = cutoff_lp_norm(2, 3.0, 1.0, {192, 256});
  EXPECT_NEAR(rep.per_test[0].norm, std::pow(0.5, 0.25) * chi, 0.02 * chi);
  EXPECT_NEAR(rep.per_test[0].ratio, std::pow(0.5, 0.75) / chi, 0.02 * std::pow(0.5, 0.75) / chi);
  KrylovTest zero{"zero", SpaceTimeFunction(g, 0.0, 1)};
  EXPECT_THROW(krylov_check({&tr}, {zero}, spec), ValidationError);
}

TEST(PairKrylov, ConstantAndMarginal) {
  const auto a = path_run(200, 0.01, 0.5, 1), b = path_run(200, 0.01, 0.5, 2);
  const Grid g = Grid::cube(2, -2.0, 2.0, 16);
  TwoPointFunction one{[](double, std::span<const double>, std::span<const double>) { return 1.0; }};
  const auto rep = pair_krylov_check({{&a, &b}}, one, g, 2.0, 2.0, 4.0);
  EXPECT_NEAR(rep.per_test[0].lhs, 0.5, 1e-12);
  EXPECT_THROW(pair_krylov_check({{&a, &a}}, one, g, 2.0, 2.0, 4.0), ValidationError);

  // f(x, y) = g(x) reduces to the single-process path integral on a.
  const Grid wide = Grid::cube(2, -8.0, 8.0, 160);
  auto bump = [](std::span<const double> x) { return std::exp(-(x[0] * x[0] + x[1] * x[1])); };
  TwoPointFunction marg{[&](double, std::span<const double> x, std::span<const double>) { return bump(x); }};
  const auto pr = pair_krylov_check({{&a, &b}}, marg, g, 2.0, 2.0, 4.0);
  const auto single = krylov_check({&a}, {{"bump", SpaceTimeFunction::from_fn(wide, bump)}}, NormSpec{});
  EXPECT_NEAR(pr.per_test[0].lhs, single.per_test[0].lhs, 3 * single.per_test[0].lhs_se + 1e-3);
}

TEST(ExpMoment, ClosedForms) {
  const auto tr = path_run(50, 0.01, 0.5, 3);
  const Grid g = Grid::cube(2, -8.0, 8.0, 32);
  const auto zero = exp_moment_check(tr, SpaceTimeFunction(g, 0.0, 1), 2.0);
  EXPECT_EQ(zero.estimate, 1.0);
  const auto c = exp_moment_check(tr, SpaceTimeFunction::from_fn(g, [](std::span<const double>) { return 0.3; }), 2.0);
  EXPECT_NEAR(c.estimate, std::exp(2.0 * 0.3 * 0.5), 1e-12);
  // Large exponent: log estimate stays finite.
  const auto big = exp_moment_check(tr, SpaceTimeFunction::from_fn(g, [](std::span<const double>) { return 1.0; }), 2000.0);
  EXPECT_NEAR(big.log_estimate, 1000.0, 1e-9);
}

TEST(ExpMoment, BumpOnDiffusion) {
  const auto tr = path_run(10000, 0.01, 0.5, 4);
  const Grid g = Grid::cube(2, -6.0, 6.0, 96);
  const auto f = SpaceTimeFunction::from_fn(g, [](std::span<const double> x) {
    return 2.0 * std::exp(-(x[0] * x[0] + x[1] * x[1]));
  });
  const auto rep = exp_moment_check(tr, f, 1.0);
  EXPECT_TRUE(std::isfinite(rep.estimate));
  EXPECT_LT(rep.std_error / rep.estimate, 0.1);
}
