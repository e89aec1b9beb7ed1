#pragma once

// Distances between measures, localized space-time norms, the maximal
// function, and Monte Carlo Krylov / Khasminskii ratios.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mvlov/common.hpp"
#include "mvlov/grid.hpp"
#include "mvlov/kernels.hpp"
#include "mvlov/particles.hpp"

namespace mvlov {

// ---------------------------------------------------------------------------
// Wasserstein distances

/// W_theta between equal-size 1D sample sets via the sorted coupling.
inline double wasserstein_1d(std::vector<double> a, std::vector<double> b, double theta = 1.0) {
  if (!(theta >= 1.0)) throw ValidationError("wasserstein: theta must be >= 1");
  if (a.size() != b.size())
    throw ValidationError("wasserstein_1d: sample counts differ (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + "); resample to a common size");
  if (a.empty()) throw ValidationError("wasserstein_1d: empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<double> c(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = std::pow(std::abs(a[i] - b[i]), theta);
  return std::pow(pairwise_sum(c) / static_cast<double>(c.size()), 1.0 / theta);
}

namespace detail {

// Cell-edge CDF of a 1D grid density, normalised to total mass 1.
inline std::vector<double> edge_cdf(const GridDensity& rho) {
  if (rho.grid.dim() != 1) throw ValidationError("1D Wasserstein needs d = 1 densities");
  const std::size_t n = rho.grid.size();
  const double mass = rho.mass();
  if (!(mass > 0.0)) throw ValidationError("wasserstein: density has zero mass");
  std::vector<double> F(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) F[i + 1] = F[i] + rho.values[i] * rho.grid.spacing(0) / mass;
  return F;
}

// integral over [0, w] of |a + (b - a) s / w| ds.
inline double abs_linear_integral(double a, double b, double w) {
  if ((a >= 0.0) == (b >= 0.0)) return 0.5 * std::abs(a + b) * w;
  const double s0 = a / (a - b) * w;
  return 0.5 * (std::abs(a) * s0 + std::abs(b) * (w - s0));
}

}  // namespace detail

/// W_1 = int |F_a - F_b| between two 1D grid densities on the same grid
/// (each normalised to unit mass; densities are piecewise constant per cell).
inline double wasserstein_1d(const GridDensity& a, const GridDensity& b) {
  require_same_grid(a.grid, b.grid, "wasserstein_1d");
  const auto Fa = detail::edge_cdf(a), Fb = detail::edge_cdf(b);
  const double h = a.grid.spacing(0);
  std::vector<double> parts(a.grid.size());
  for (std::size_t i = 0; i < parts.size(); ++i)
    parts[i] = detail::abs_linear_integral(Fa[i] - Fb[i], Fa[i + 1] - Fb[i + 1], h);
  return pairwise_sum(parts);
}

/// W_1 = int |F_n - F| between the empirical law of 1D samples and a grid
/// density (normalised to unit mass, piecewise constant per cell).
inline double wasserstein_1d(std::vector<double> samples, const GridDensity& rho) {
  if (samples.empty()) throw ValidationError("wasserstein_1d: empty samples");
  const auto F = detail::edge_cdf(rho);
  std::sort(samples.begin(), samples.end());
  const double lo = rho.grid.lo()[0], h = rho.grid.spacing(0);
  const std::size_t n = rho.grid.size();
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  auto cdf = [&](double x) {
    if (x <= lo) return 0.0;
    const double s = (x - lo) / h;
    if (s >= static_cast<double>(n)) return 1.0;
    const auto i = static_cast<std::size_t>(s);
    return F[i] + (F[i + 1] - F[i]) * (s - static_cast<double>(i));
  };
  // Breakpoints: grid edges and samples; both CDFs are linear / constant between them.
  std::vector<double> pts(samples);
  for (std::size_t i = 0; i <= n; ++i) pts.push_back(lo + static_cast<double>(i) * h);
  std::sort(pts.begin(), pts.end());
  std::vector<double> parts;
  parts.reserve(pts.size());
  std::size_t below = 0;  // samples <= current left point
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    while (below < samples.size() && samples[below] <= pts[k]) ++below;
    const double w = pts[k + 1] - pts[k];
    if (w <= 0.0) continue;
    const double Fn = static_cast<double>(below) * inv_n;
    parts.push_back(detail::abs_linear_integral(Fn - cdf(pts[k]), Fn - cdf(pts[k + 1]), w));
  }
  return pairwise_sum(parts);
}

/// Weighted atoms for the discrete transport solver.
struct WeightedPoints {
  std::size_t d = 0;
  std::vector<double> positions;  // n x d
  std::vector<double> weights;

  std::size_t size() const { return weights.size(); }

  static WeightedPoints uniform(std::size_t d, std::vector<double> positions) {
    WeightedPoints w;
    w.d = d;
    w.positions = std::move(positions);
    const std::size_t n = w.positions.size() / d;
    w.weights.assign(n, 1.0 / static_cast<double>(n));
    return w;
  }
};

inline constexpr std::size_t kMaxTransportAtoms = 512;

namespace detail {

// Successive shortest paths with Johnson potentials on the bipartite
// transportation network; costs and flows in long double.
inline long double min_cost_transport(const std::vector<long double>& supply,
                                      const std::vector<long double>& demand,
                                      const std::vector<long double>& cost) {
  using LD = long double;
  const std::size_t n = supply.size(), m = demand.size(), V = n + m;
  constexpr LD eps = 1e-15L;
  constexpr LD inf = std::numeric_limits<LD>::infinity();
  std::vector<LD> flow(n * m, 0.0L), left(supply), need(demand), pot(V, 0.0L), dist(V);
  std::vector<std::ptrdiff_t> prev(V);
  std::vector<char> done(V);
  // Initial potentials: left nodes 0, right nodes min incoming cost.
  for (std::size_t j = 0; j < m; ++j) {
    LD best = inf;
    for (std::size_t i = 0; i < n; ++i) best = std::min(best, cost[i * m + j]);
    pot[n + j] = best;
  }
  LD total_left = 0.0L;
  for (LD s : left) total_left += s;
  std::size_t guard = 0;
  while (total_left > eps) {
    if (++guard > 16 * (n + m) * (n + m) + 64) throw NumericalAbort("transport solver failed to converge");
    // Dijkstra from every left node with remaining supply.
    std::fill(dist.begin(), dist.end(), inf);
    std::fill(prev.begin(), prev.end(), -1);
    std::fill(done.begin(), done.end(), 0);
    for (std::size_t i = 0; i < n; ++i)
      if (left[i] > eps) dist[i] = 0.0L;
    for (std::size_t it = 0; it < V; ++it) {
      std::size_t u = V;
      for (std::size_t v = 0; v < V; ++v)
        if (!done[v] && dist[v] < inf && (u == V || dist[v] < dist[u])) u = v;
      if (u == V) break;
      done[u] = 1;
      if (u < n) {
        for (std::size_t j = 0; j < m; ++j) {
          const std::size_t v = n + j;
          if (done[v]) continue;  // rounding can leave tiny negative reduced costs
          const LD rc = cost[u * m + j] + pot[u] - pot[v];
          if (dist[u] + rc < dist[v]) {
            dist[v] = dist[u] + rc;
            prev[v] = static_cast<std::ptrdiff_t>(u);
          }
        }
      } else {
        const std::size_t j = u - n;
        for (std::size_t i = 0; i < n; ++i) {
          if (done[i] || flow[i * m + j] <= eps) continue;
          const LD rc = -cost[i * m + j] + pot[u] - pot[i];
          if (dist[u] + rc < dist[i]) {
            dist[i] = dist[u] + rc;
            prev[i] = static_cast<std::ptrdiff_t>(u);
          }
        }
      }
    }
    // Closest right node with unmet demand.
    std::size_t sink = V;
    for (std::size_t j = 0; j < m; ++j)
      if (need[j] > eps && dist[n + j] < inf && (sink == V || dist[n + j] < dist[sink])) sink = n + j;
    if (sink == V) throw NumericalAbort("transport solver: no augmenting path");
    const LD cap = dist[sink];
    for (std::size_t v = 0; v < V; ++v) pot[v] += std::min(dist[v], cap);
    // Bottleneck along the path.
    LD push = need[sink - n];
    std::size_t v = sink, hops = 0;
    while (prev[v] >= 0) {
      if (++hops > V) throw NumericalAbort("transport solver: cyclic augmenting path");
      const auto u = static_cast<std::size_t>(prev[v]);
      if (u >= n) push = std::min(push, flow[v * m + (u - n)]);  // backward edge right u -> left v
      v = u;
    }
    push = std::min(push, left[v]);
    v = sink;
    while (prev[v] >= 0) {
      const auto u = static_cast<std::size_t>(prev[v]);
      if (u < n)
        flow[u * m + (v - n)] += push;
      else
        flow[v * m + (u - n)] -= push;
      v = u;
    }
    left[v] -= push;
    need[sink - n] -= push;
    total_left -= push;
  }
  LD c = 0.0L;
  for (std::size_t k = 0; k < flow.size(); ++k) c += flow[k] * cost[k];
  return c;
}

}  // namespace detail

/// Exact W_theta between weighted point sets of at most 512 atoms each.
inline double wasserstein_discrete(const WeightedPoints& a, const WeightedPoints& b, double theta = 1.0) {
  if (!(theta >= 1.0)) throw ValidationError("wasserstein: theta must be >= 1");
  if (a.d != b.d || a.d == 0) throw ValidationError("wasserstein_discrete: dimension mismatch");
  if (a.size() > kMaxTransportAtoms || b.size() > kMaxTransportAtoms)
    throw ValidationError("wasserstein_discrete: at most " + std::to_string(kMaxTransportAtoms) +
                          " atoms per side; use wasserstein_1d per axis or subsample");
  if (a.size() == 0 || b.size() == 0) throw ValidationError("wasserstein_discrete: empty point set");
  for (const auto* w : {&a, &b}) {
    if (w->positions.size() != w->size() * w->d) throw ValidationError("wasserstein_discrete: bad position count");
    for (double x : w->weights)
      if (!(x >= 0.0)) throw ValidationError("wasserstein_discrete: negative weight");
    if (std::abs(pairwise_sum(w->weights) - 1.0) > 1e-9)
      throw ValidationError("wasserstein_discrete: weights must sum to 1");
  }
  const std::size_t n = a.size(), m = b.size(), d = a.d;
  std::vector<long double> supply(a.weights.begin(), a.weights.end()), demand(b.weights.begin(), b.weights.end());
  // Rescale demand to the exact supply total so both sides balance in long double.
  long double sa = 0.0L, sb = 0.0L;
  for (auto s : supply) sa += s;
  for (auto s : demand) sb += s;
  for (auto& s : demand) s *= sa / sb;
  std::vector<long double> cost(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      long double r2 = 0.0L;
      for (std::size_t k = 0; k < d; ++k) {
        const long double dx = static_cast<long double>(a.positions[i * d + k]) - b.positions[j * d + k];
        r2 += dx * dx;
      }
      cost[i * m + j] = std::pow(std::sqrt(r2), static_cast<long double>(theta));
    }
  const long double c = detail::min_cost_transport(supply, demand, cost);
  return static_cast<double>(std::pow(std::max(c, 0.0L), 1.0L / static_cast<long double>(theta)));
}

// ---------------------------------------------------------------------------
// Weighted total variation

/// sum_cells phi_theta(x) |rho1 - rho2| vol with phi_theta = 1 + |x|^theta;
/// theta = 0 is plain total variation (weight 1).
inline double weighted_tv(const GridDensity& rho1, const GridDensity& rho2, double theta) {
  require_same_grid(rho1.grid, rho2.grid, "weighted_tv");
  if (!(theta >= 0.0)) throw ValidationError("weighted_tv: theta must be >= 0");
  const Grid& g = rho1.grid;
  std::vector<double> x(g.dim()), parts(g.size());
  for (std::size_t c = 0; c < g.size(); ++c) {
    g.center_of(c, x);
    const double w = theta == 0.0 ? 1.0 : 1.0 + std::pow(norm(x), theta);
    parts[c] = w * std::abs(rho1.values[c] - rho2.values[c]);
  }
  return pairwise_sum(parts) * g.cell_volume();
}

// ---------------------------------------------------------------------------
// Localized norms

enum class LatticeMode { continuum_sup, unit_lattice };

struct NormSpec {
  double p = 2.0;
  double q = kInf;
  double r = 1.0;
  LatticeMode lattice = LatticeMode::continuum_sup;
  // Spacing of the z lattice in continuum_sup mode, snapped to whole cells;
  // 0 picks r / 4.
  double z_spacing = 0.0;

  void validate() const {
    if (!(p > 1.0) || !(q > 1.0)) throw ValidationError("norm exponents p, q must be > 1");
    if (!(r > 0.0)) throw ValidationError("cutoff radius r must be > 0");
    if (z_spacing < 0.0) throw ValidationError("z_spacing must be >= 0");
  }
};

namespace detail {

inline double lp_accumulate(double acc, double v, double p) {
  return is_infinite_exponent(p) ? std::max(acc, std::abs(v)) : acc + std::pow(std::abs(v), p);
}

inline double lp_finish(double acc, double vol, double p) {
  return is_infinite_exponent(p) ? acc : std::pow(acc * vol, 1.0 / p);
}

// Combines per-slice spatial norms into (int_0^T n_t^q dt)^{1/q} (left Riemann
// over the slices) or max over slices for q = inf.
inline double time_norm(std::span<const double> per_slice, double slice_dt, double T, double q) {
  if (per_slice.size() == 1) {
    return is_infinite_exponent(q) ? per_slice[0] : per_slice[0] * std::pow(T, 1.0 / q);
  }
  const std::size_t K = std::min(per_slice.size(), steps_in(T, slice_dt));
  double acc = 0.0;
  for (std::size_t k = 0; k < K; ++k)
    acc = is_infinite_exponent(q) ? std::max(acc, per_slice[k]) : acc + std::pow(per_slice[k], q) * slice_dt;
  return is_infinite_exponent(q) ? acc : std::pow(acc, 1.0 / q);
}

// Integer points z with Q_z = prod (z_i, z_i + 1] meeting the box, and the
// cells (by centre) in each.
inline std::vector<std::vector<std::size_t>> unit_cells(const Grid& g) {
  const std::size_t d = g.dim();
  std::vector<long> zlo(d), zn(d);
  std::size_t count = 1;
  for (std::size_t a = 0; a < d; ++a) {
    zlo[a] = static_cast<long>(std::floor(g.lo()[a]));
    zn[a] = static_cast<long>(std::ceil(g.hi()[a])) - zlo[a];
    count *= static_cast<std::size_t>(zn[a]);
  }
  std::vector<std::vector<std::size_t>> cells(count);
  std::vector<double> x(d);
  for (std::size_t c = 0; c < g.size(); ++c) {
    g.center_of(c, x);
    std::size_t flat = 0;
    for (std::size_t a = 0; a < d; ++a) {
      // (z, z + 1] contains x  <=>  z = ceil(x) - 1
      const long z = static_cast<long>(std::ceil(x[a])) - 1 - zlo[a];
      flat = flat * static_cast<std::size_t>(zn[a]) + static_cast<std::size_t>(std::clamp(z, 0L, zn[a] - 1));
    }
    cells[flat].push_back(c);
  }
  std::erase_if(cells, [](const auto& v) { return v.empty(); });
  return cells;
}

}  // namespace detail

/// sup_z ( int_0^T ||f_t chi^z_r||_p^q dt )^{1/q} with chi^z_r(x) = chi(|x - z| / r).
/// f vanishes outside its grid. continuum_sup samples z on cell centres
/// spaced about z_spacing apart; unit_lattice takes z in Z^d inside the box.
inline double localized_norm(const SpaceTimeFunction& f, const NormSpec& spec, double T) {
  spec.validate();
  const Grid& g = f.grid;
  const std::size_t d = g.dim(), M = g.size();
  if (M == 0) throw ValidationError("localized_norm: empty domain");
  const double vol = g.cell_volume();
  const std::size_t slices = f.nt;

  // z candidates as points in space.
  std::vector<std::vector<double>> zs;
  if (spec.lattice == LatticeMode::unit_lattice) {
    std::vector<long> lo(d), n(d);
    std::size_t count = 1;
    for (std::size_t a = 0; a < d; ++a) {
      lo[a] = static_cast<long>(std::ceil(g.lo()[a]));
      n[a] = static_cast<long>(std::floor(g.hi()[a])) - lo[a] + 1;
      if (n[a] <= 0) throw ValidationError("localized_norm: no lattice point inside the domain");
      count *= static_cast<std::size_t>(n[a]);
    }
    for (std::size_t c = 0; c < count; ++c) {
      std::vector<double> z(d);
      std::size_t rem = c;
      for (std::size_t a = d; a-- > 0;) {
        z[a] = static_cast<double>(lo[a] + static_cast<long>(rem % static_cast<std::size_t>(n[a])));
        rem /= static_cast<std::size_t>(n[a]);
      }
      zs.push_back(std::move(z));
    }
  } else {
    const double want = spec.z_spacing > 0.0 ? spec.z_spacing : spec.r / 4.0;
    std::vector<std::size_t> stride(d), count(d);
    std::size_t total = 1;
    for (std::size_t a = 0; a < d; ++a) {
      stride[a] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(want / g.spacing(a))));
      count[a] = (g.cells()[a] + stride[a] - 1) / stride[a];
      total *= count[a];
    }
    for (std::size_t c = 0; c < total; ++c) {
      std::vector<double> z(d);
      std::size_t rem = c;
      for (std::size_t a = d; a-- > 0;) {
        z[a] = g.center(a, (rem % count[a]) * stride[a]);
        rem /= count[a];
      }
      zs.push_back(std::move(z));
    }
  }

  std::vector<double> best_per_z(zs.size(), 0.0);
  parallel_for(zs.size(), [&](std::size_t lo_z, std::size_t hi_z) {
    std::vector<std::size_t> ilo(d), ihi(d), idx(d);
    std::vector<double> x(d), per_slice(slices);
    std::vector<std::pair<std::size_t, double>> support;
    for (std::size_t zi = lo_z; zi < hi_z; ++zi) {
      const auto& z = zs[zi];
      support.clear();
      std::size_t box = 1;
      for (std::size_t a = 0; a < d; ++a) {
        const double h = g.spacing(a);
        const double a0 = (z[a] - 2.0 * spec.r - g.lo()[a]) / h - 0.5, a1 = (z[a] + 2.0 * spec.r - g.lo()[a]) / h - 0.5;
        ilo[a] = static_cast<std::size_t>(std::clamp(std::floor(a0), 0.0, static_cast<double>(g.cells()[a] - 1)));
        ihi[a] = static_cast<std::size_t>(std::clamp(std::ceil(a1), 0.0, static_cast<double>(g.cells()[a] - 1)));
        box *= ihi[a] - ilo[a] + 1;
      }
      for (std::size_t b = 0; b < box; ++b) {
        std::size_t rem = b;
        for (std::size_t a = d; a-- > 0;) {
          const std::size_t w = ihi[a] - ilo[a] + 1;
          idx[a] = ilo[a] + rem % w;
          rem /= w;
          x[a] = g.center(a, idx[a]);
        }
        double r2 = 0.0;
        for (std::size_t a = 0; a < d; ++a) r2 += (x[a] - z[a]) * (x[a] - z[a]);
        const double chi = cutoff(std::sqrt(r2) / spec.r);
        if (chi > 0.0) support.emplace_back(g.flatten(idx), chi);
      }
      for (std::size_t s = 0; s < slices; ++s) {
        const auto vals = f.slice(s);
        double acc = 0.0;
        for (const auto& [c, chi] : support) acc = detail::lp_accumulate(acc, vals[c] * chi, spec.p);
        per_slice[s] = detail::lp_finish(acc, vol, spec.p);
      }
      best_per_z[zi] = detail::time_norm(per_slice, f.dt, T, spec.q);
    }
  });
  return *std::max_element(best_per_z.begin(), best_per_z.end());
}

/// Two-point function f_t(x, y) evaluated on a product grid.
struct TwoPointFunction {
  std::function<double(double, std::span<const double>, std::span<const double>)> fn;
  double dt = 0.0;     // time sampling for the norm; 0: time-independent
  std::size_t nt = 1;
};

/// sup over unit lattice cells (z, z') of
/// ( int_0^T ( int_{Q_z'} ||1_{Q_z} f_t(., y)||_{p1}^{p2} dy )^{q0/p2} dt )^{1/q0},
/// with x and y both sampled on the cell centres of grid.
inline double mixed_localized_norm(const TwoPointFunction& f, const Grid& grid, double p1, double p2,
                                   double q0, double T) {
  if (!(p1 > 1.0) || !(p2 > 1.0) || !(q0 > 1.0)) throw ValidationError("mixed norm exponents must be > 1");
  const auto cells = detail::unit_cells(grid);
  const std::size_t d = grid.dim();
  const double vol = grid.cell_volume();
  const std::size_t slices = f.nt;
  std::vector<double> best(cells.size() * cells.size(), 0.0);
  parallel_for(best.size(), [&](std::size_t lo, std::size_t hi) {
    std::vector<double> x(d), y(d), per_slice(slices);
    for (std::size_t pair = lo; pair < hi; ++pair) {
      const auto& qz = cells[pair / cells.size()];
      const auto& qy = cells[pair % cells.size()];
      for (std::size_t s = 0; s < slices; ++s) {
        const double t = static_cast<double>(s) * f.dt;
        double outer = 0.0;
        for (std::size_t cy : qy) {
          grid.center_of(cy, y);
          double inner = 0.0;
          for (std::size_t cx : qz) {
            grid.center_of(cx, x);
            inner = detail::lp_accumulate(inner, f.fn(t, x, y), p1);
          }
          outer = detail::lp_accumulate(outer, detail::lp_finish(inner, vol, p1), p2);
        }
        per_slice[s] = detail::lp_finish(outer, vol, p2);
      }
      best[pair] = detail::time_norm(per_slice, f.dt, T, q0);
    }
  });
  return *std::max_element(best.begin(), best.end());
}

// ---------------------------------------------------------------------------
// Maximal function

/// M_R f(x) = sup over r in {R, R/2, R/4, ...} (down to one spacing) of the
/// average of |f| over the grid cells with centres in B_r(x) inside the box.
/// The dyadic ladder under-approximates the continuous sup by at most a
/// factor 2^d.
inline GridDensity maximal_function(const GridDensity& f, double R) {
  const Grid& g = f.grid;
  const std::size_t d = g.dim(), M = g.size();
  const double h = g.min_spacing();
  if (!(R >= 2.0 * h)) throw ValidationError("maximal_function: R must be at least two grid spacings");
  std::vector<double> radii;
  for (double r = R; r >= h * (1.0 - 1e-12); r *= 0.5) radii.push_back(r);
  // Offset stencils per radius.
  std::vector<std::vector<std::vector<long>>> stencils;
  for (double r : radii) {
    std::vector<long> span(d);
    std::size_t box = 1;
    for (std::size_t a = 0; a < d; ++a) {
      span[a] = static_cast<long>(std::floor(r / g.spacing(a) + 1e-12));
      box *= static_cast<std::size_t>(2 * span[a] + 1);
    }
    std::vector<std::vector<long>> st;
    for (std::size_t b = 0; b < box; ++b) {
      std::vector<long> off(d);
      std::size_t rem = b;
      double r2 = 0.0;
      for (std::size_t a = d; a-- > 0;) {
        const auto w = static_cast<std::size_t>(2 * span[a] + 1);
        off[a] = static_cast<long>(rem % w) - span[a];
        rem /= w;
        const double dx = static_cast<double>(off[a]) * g.spacing(a);
        r2 += dx * dx;
      }
      if (r2 <= r * r * (1.0 + 1e-12)) st.push_back(std::move(off));
    }
    stencils.push_back(std::move(st));
  }
  GridDensity out(g);
  parallel_for(M, [&](std::size_t lo, std::size_t hi) {
    std::vector<std::size_t> idx(d), nb(d);
    for (std::size_t c = lo; c < hi; ++c) {
      g.unflatten(c, idx);
      double best = 0.0;
      for (const auto& st : stencils) {
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& off : st) {
          bool inside = true;
          for (std::size_t a = 0; a < d && inside; ++a) {
            const long v = static_cast<long>(idx[a]) + off[a];
            inside = v >= 0 && v < static_cast<long>(g.cells()[a]);
            if (inside) nb[a] = static_cast<std::size_t>(v);
          }
          if (!inside) continue;
          sum += std::abs(f.values[g.flatten(nb)]);
          ++count;
        }
        if (count) best = std::max(best, sum / static_cast<double>(count));
      }
      out.values[c] = best;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Krylov and Khasminskii estimates

struct KrylovEntry {
  std::string id;
  double lhs = 0.0;
  double lhs_se = 0.0;
  double norm = 0.0;
  double ratio = 0.0;
};

struct KrylovReport {
  double ratio_max = 0.0;
  std::vector<KrylovEntry> per_test;   // entries of the first run
  std::vector<double> run_ratio_max;   // ratio_max per supplied run
  double dt_stability = 1.0;           // max / min of run_ratio_max
};

struct KrylovTest {
  std::string id;
  SpaceTimeFunction f;
};

namespace detail {

// Per-path left Riemann sums int_0^T f_t(X_t) dt over the stored steps.
inline std::vector<double> path_integrals(const Trajectory& tr, const SpaceTimeFunction& f) {
  if (f.grid.dim() != tr.d) throw ValidationError("krylov: test function dimension does not match the trajectory");
  const std::size_t K = tr.steps();
  if (K == 0) throw ValidationError("krylov: trajectory has no steps (record_path must be on)");
  std::vector<double> out(tr.N);
  parallel_for(tr.N, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> terms(K);
    for (std::size_t i = lo; i < hi; ++i) {
      for (std::size_t k = 0; k < K; ++k) {
        const double t = static_cast<double>(k) * tr.dt;
        const std::span<const double> x(tr.positions[k].data() + i * tr.d, tr.d);
        terms[k] = f.grid.contains(x) ? f.at(t, x) : 0.0;
      }
      out[i] = pairwise_sum(terms) * tr.dt;
    }
  });
  return out;
}

inline void finish_report(KrylovReport& rep) {
  rep.ratio_max = *std::max_element(rep.run_ratio_max.begin(), rep.run_ratio_max.end());
  const double lo = *std::min_element(rep.run_ratio_max.begin(), rep.run_ratio_max.end());
  rep.dt_stability = rep.ratio_max / lo;
}

}  // namespace detail

/// For each test f: lhs = MC estimate of E int_0^T f_t(X_t) dt, ratio =
/// lhs / localized_norm(f). Several runs (e.g. dt refinements) give
/// dt_stability = max / min of the per-run maximal ratios.
inline KrylovReport krylov_check(const std::vector<const Trajectory*>& runs, const std::vector<KrylovTest>& tests,
                                 const NormSpec& spec) {
  if (runs.empty() || tests.empty()) throw ValidationError("krylov_check: need at least one run and one test");
  const double T = runs.front()->horizon();
  std::vector<double> norms;
  for (const auto& t : tests) {
    for (double v : t.f.values)
      if (v < 0.0) throw ValidationError("krylov_check: test '" + t.id + "' is negative somewhere");
    const double n = localized_norm(t.f, spec, T);
    if (!(n > 0.0)) throw ValidationError("krylov_check: test '" + t.id + "' has zero norm");
    norms.push_back(n);
  }
  KrylovReport rep;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    if (std::abs(runs[r]->horizon() - T) > 1e-9 * T) throw ValidationError("krylov_check: runs differ in horizon");
    double best = 0.0;
    for (std::size_t k = 0; k < tests.size(); ++k) {
      const auto v = detail::path_integrals(*runs[r], tests[k].f);
      const auto est = mean_and_se(v);
      const KrylovEntry e{tests[k].id, est.mean, est.std_error, norms[k], est.mean / norms[k]};
      if (!std::isfinite(e.ratio)) throw NumericalAbort("krylov_check: non-finite ratio for " + e.id);
      best = std::max(best, e.ratio);
      if (r == 0) rep.per_test.push_back(e);
    }
    rep.run_ratio_max.push_back(best);
  }
  detail::finish_report(rep);
  return rep;
}

/// Two independent processes: lhs = E int_0^T f_t(X_t, Y_t) dt pairing path
/// i of a with path i of b, against the mixed localized norm of f on grid.
inline KrylovReport pair_krylov_check(const std::vector<std::pair<const Trajectory*, const Trajectory*>>& runs,
                                      const TwoPointFunction& f, const Grid& grid, double p1, double p2, double q0,
                                      const std::string& id = "pair") {
  if (runs.empty()) throw ValidationError("pair_krylov_check: no runs");
  const double T = runs.front().first->horizon();
  const double nrm = mixed_localized_norm(f, grid, p1, p2, q0, T);
  if (!(nrm > 0.0)) throw ValidationError("pair_krylov_check: test function has zero norm");
  KrylovReport rep;
  for (const auto& [a, b] : runs) {
    if (a->seed == b->seed) throw ValidationError("pair_krylov_check: runs share seed " + std::to_string(a->seed));
    if (a->N != b->N || a->d != b->d || a->steps() != b->steps() || a->dt != b->dt)
      throw ValidationError("pair_krylov_check: runs differ in shape or step");
    const std::size_t K = a->steps(), d = a->d;
    std::vector<double> per_path(a->N);
    parallel_for(a->N, [&](std::size_t lo, std::size_t hi) {
      std::vector<double> terms(K);
      for (std::size_t i = lo; i < hi; ++i) {
        for (std::size_t k = 0; k < K; ++k)
          terms[k] = f.fn(static_cast<double>(k) * a->dt, {a->positions[k].data() + i * d, d},
                          {b->positions[k].data() + i * d, d});
        per_path[i] = pairwise_sum(terms) * a->dt;
      }
    });
    const auto est = mean_and_se(per_path);
    const KrylovEntry e{id, est.mean, est.std_error, nrm, est.mean / nrm};
    if (!std::isfinite(e.ratio)) throw NumericalAbort("pair_krylov_check: non-finite ratio");
    if (rep.per_test.empty()) rep.per_test.push_back(e);
    rep.run_ratio_max.push_back(e.ratio);
  }
  detail::finish_report(rep);
  return rep;
}

struct ExpMomentReport {
  double lambda = 0.0;
  double estimate = 0.0;      // E exp(lambda int f)
  double std_error = 0.0;
  double log_estimate = 0.0;  // log of the estimate, finite even when estimate overflows
  double sup_f = 0.0;
};

/// E exp(lambda int_0^T f_t(X_t) dt) by log-sum-exp over paths.
inline ExpMomentReport exp_moment_check(const Trajectory& tr, const SpaceTimeFunction& f, double lambda) {
  if (!(lambda > 0.0)) throw ValidationError("exp_moment_check: lambda must be > 0");
  double sup_f = 0.0;
  for (double v : f.values) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("exp_moment_check: f must be finite and >= 0");
    sup_f = std::max(sup_f, v);
  }
  auto a = detail::path_integrals(tr, f);
  for (auto& v : a) v *= lambda;
  const double m = *std::max_element(a.begin(), a.end());
  std::vector<double> e(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) e[i] = std::exp(a[i] - m);
  const auto scaled = mean_and_se(e);
  ExpMomentReport rep;
  rep.lambda = lambda;
  rep.sup_f = sup_f;
  rep.log_estimate = m + std::log(scaled.mean);
  rep.estimate = std::exp(rep.log_estimate);
  rep.std_error = std::exp(m) * scaled.std_error;
  return rep;
}

}  // namespace mvlov
