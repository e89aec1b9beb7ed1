#pragma once

// Grid densities from particle ensembles, the Gaussian heat semigroup
//
//   P_t mu0(y) = (2 pi t)^{-d/2} int exp(-|x - y|^2 / (2 t)) mu0(dx),
//
// (variance t per coordinate, so pure diffusion sqrt(2) dW from mu0 has law
// P_{2t} mu0), and empirical fits of the two-sided and gradient Gaussian
// bounds.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "mvlov/common.hpp"
#include "mvlov/grid.hpp"
#include "mvlov/particles.hpp"

namespace mvlov {

/// Weighted point masses in R^d.
struct AtomMeasure {
  std::size_t d = 0;
  std::vector<double> positions;  // n x d
  std::vector<double> weights;    // n

  static AtomMeasure dirac(std::vector<double> x) {
    AtomMeasure m;
    m.d = x.size();
    m.positions = std::move(x);
    m.weights = {1.0};
    return m;
  }

  /// Empirical measure of an ensemble.
  static AtomMeasure empirical(const ParticleEnsemble& ens) {
    AtomMeasure m;
    m.d = ens.d;
    m.positions = ens.positions;
    m.weights.assign(ens.N, 1.0 / static_cast<double>(ens.N));
    return m;
  }

  std::size_t size() const { return weights.size(); }
  double mass() const { return pairwise_sum(weights); }
};

using Measure = std::variant<AtomMeasure, GridDensity>;

// ---------------------------------------------------------------------------
// Kernel density estimate

/// Silverman's rule per axis: h_k = s_k (4 / ((d + 2) N))^{1/(d+4)}.
inline std::vector<double> silverman_bandwidth(const ParticleEnsemble& ens) {
  const double d = static_cast<double>(ens.d), N = static_cast<double>(ens.N);
  const double factor = std::pow(4.0 / ((d + 2.0) * N), 1.0 / (d + 4.0));
  std::vector<double> h(ens.d);
  for (std::size_t k = 0; k < ens.d; ++k) {
    const auto v = ens.axis(k);
    const auto ms = mean_and_se(v);
    const double sd = ms.std_error * std::sqrt(N);
    h[k] = (sd > 0.0 ? sd : 1e-3) * factor;
  }
  return h;
}

namespace detail {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline double quantile(std::vector<double> v, double q) {
  const auto idx = static_cast<std::size_t>(std::clamp(q, 0.0, 1.0) * static_cast<double>(v.size() - 1));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(idx), v.end());
  return v[idx];
}

// Cell-integrated Gaussian weights of one particle along one axis, normalised
// to sum to 1 over the cells inside the box.
inline void axis_weights(const Grid& g, std::size_t axis, double x, double h, std::size_t& first,
                         std::vector<double>& w) {
  const double dx = g.spacing(axis), lo = g.lo()[axis];
  const auto n = static_cast<long>(g.cells()[axis]);
  const double reach = 7.0 * h + dx;
  const long a = std::clamp(static_cast<long>(std::floor((x - reach - lo) / dx)), 0L, n - 1);
  const long b = std::clamp(static_cast<long>(std::floor((x + reach - lo) / dx)), 0L, n - 1);
  first = static_cast<std::size_t>(a);
  w.assign(static_cast<std::size_t>(b - a + 1), 0.0);
  double total = 0.0;
  for (long c = a; c <= b; ++c) {
    const double e0 = lo + static_cast<double>(c) * dx, e1 = e0 + dx;
    const double v = normal_cdf((e1 - x) / h) - normal_cdf((e0 - x) / h);
    w[static_cast<std::size_t>(c - a)] = v;
    total += v;
  }
  if (total > 0.0)
    for (double& v : w) v /= total;
}

}  // namespace detail

/// Gaussian product-kernel estimate on grid. Each particle inside the box
/// contributes exactly 1/N of mass (cell-integrated weights renormalised at
/// the walls); particles outside contribute nothing. Bandwidth defaults to
/// Silverman's rule and may be floored per axis.
inline GridDensity kde(const ParticleEnsemble& ens, std::optional<std::vector<double>> bandwidth,
                       const Grid& grid, double bandwidth_floor = 0.0) {
  if (ens.N < 2) throw ValidationError("kde needs N >= 2");
  if (grid.dim() != ens.d) throw ValidationError("kde: grid dimension does not match ensemble");
  for (std::size_t k = 0; k < ens.d; ++k) {
    const auto v = ens.axis(k);
    const double qlo = detail::quantile(v, 0.005), qhi = detail::quantile(v, 0.995);
    if (qlo < grid.lo()[k] || qhi > grid.hi()[k])
      throw ValidationError("kde: grid does not cover the ensemble's 0.99 quantile box on axis " +
                            std::to_string(k));
  }
  std::vector<double> h = bandwidth ? *bandwidth : silverman_bandwidth(ens);
  if (h.size() == 1 && ens.d > 1) h.assign(ens.d, h[0]);
  if (h.size() != ens.d) throw ValidationError("kde: bandwidth must be scalar or per axis");
  for (double& v : h) {
    if (!(v > 0.0)) throw ValidationError("kde: bandwidth must be > 0");
    v = std::max(v, bandwidth_floor);
  }

  GridDensity out(grid);
  const double scale = 1.0 / (static_cast<double>(ens.N) * grid.cell_volume());
  const std::size_t d = ens.d;
  std::vector<std::size_t> first(d);
  std::vector<std::vector<double>> w(d);
  for (std::size_t i = 0; i < ens.N; ++i) {
    const auto x = ens.particle(i);
    if (!grid.contains(x)) continue;
    for (std::size_t k = 0; k < d; ++k) detail::axis_weights(grid, k, x[k], h[k], first[k], w[k]);
    if (d == 1) {
      for (std::size_t a = 0; a < w[0].size(); ++a) out.values[first[0] + a] += w[0][a] * scale;
    } else if (d == 2) {
      const std::size_t n1 = grid.cells()[1];
      for (std::size_t a = 0; a < w[0].size(); ++a) {
        const double wa = w[0][a] * scale;
        double* row = out.values.data() + (first[0] + a) * n1 + first[1];
        for (std::size_t b = 0; b < w[1].size(); ++b) row[b] += wa * w[1][b];
      }
    } else {
      std::vector<std::size_t> idx(d), cnt(d, 0);
      std::size_t total = 1;
      for (std::size_t k = 0; k < d; ++k) total *= w[k].size();
      for (std::size_t c = 0; c < total; ++c) {
        std::size_t rem = c;
        double v = scale;
        for (std::size_t k = d; k-- > 0;) {
          const std::size_t j = rem % w[k].size();
          rem /= w[k].size();
          idx[k] = first[k] + j;
          v *= w[k][j];
        }
        out.values[grid.flatten(idx)] += v;
      }
    }
  }
  return out;
}

/// Central-difference gradient (one-sided at the walls).
inline VectorField gradient(const GridDensity& rho) {
  const Grid& g = rho.grid;
  const std::size_t d = g.dim();
  VectorField out(g);
  std::vector<std::size_t> idx(d);
  for (std::size_t c = 0; c < g.size(); ++c) {
    g.unflatten(c, idx);
    for (std::size_t k = 0; k < d; ++k) {
      const std::size_t s = g.stride(k), n = g.cells()[k];
      const double h = g.spacing(k);
      double v = 0.0;
      if (n > 1) {
        if (idx[k] == 0)
          v = (rho.values[c + s] - rho.values[c]) / h;
        else if (idx[k] == n - 1)
          v = (rho.values[c] - rho.values[c - s]) / h;
        else
          v = (rho.values[c + s] - rho.values[c - s]) / (2.0 * h);
      }
      out.values[c * d + k] = v;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Heat semigroup

namespace detail {

// Applies the 1D Gaussian matrix along `axis`, mapping values on `in`'s axis
// centres to `out`'s axis centres. Cell width of `in` is the quadrature weight.
inline std::vector<double> gauss_axis(const std::vector<double>& vals, const std::vector<std::size_t>& shape,
                                      std::size_t axis, const Grid& in, const Grid& out, double t) {
  const std::size_t nin = in.cells()[axis], nout = out.cells()[axis];
  std::vector<double> m(nout * nin);
  const double norm1 = 1.0 / std::sqrt(2.0 * std::numbers::pi * t);
  for (std::size_t a = 0; a < nout; ++a)
    for (std::size_t b = 0; b < nin; ++b) {
      const double r = out.center(axis, a) - in.center(axis, b);
      m[a * nin + b] = norm1 * std::exp(-r * r / (2.0 * t)) * in.spacing(axis);
    }
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= shape[k];
  for (std::size_t k = axis + 1; k < shape.size(); ++k) inner *= shape[k];
  std::vector<double> res(outer * nout * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < nout; ++a)
      for (std::size_t b = 0; b < nin; ++b) {
        const double w = m[a * nin + b];
        if (w == 0.0) continue;
        const double* src = vals.data() + (o * nin + b) * inner;
        double* dst = res.data() + (o * nout + a) * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] += w * src[i];
      }
  return res;
}

}  // namespace detail

/// P_t mu0 evaluated at the cell centres of grid.
inline GridDensity heat_semigroup(const Measure& mu0, double t, const Grid& grid) {
  if (!(t > 0.0)) throw ValidationError("heat_semigroup: t must be > 0");
  const std::size_t d = grid.dim();
  if (const auto* atoms = std::get_if<AtomMeasure>(&mu0)) {
    if (atoms->d != d) throw ValidationError("heat_semigroup: measure dimension does not match grid");
    GridDensity out(grid);
    const double norm1 = 1.0 / std::sqrt(2.0 * std::numbers::pi * t);
    std::vector<std::vector<double>> f(d);
    for (std::size_t a = 0; a < atoms->size(); ++a) {
      for (std::size_t k = 0; k < d; ++k) {
        f[k].resize(grid.cells()[k]);
        const double x = atoms->positions[a * d + k];
        for (std::size_t i = 0; i < grid.cells()[k]; ++i) {
          const double r = grid.center(k, i) - x;
          f[k][i] = norm1 * std::exp(-r * r / (2.0 * t));
        }
      }
      const double w = atoms->weights[a];
      std::vector<std::size_t> idx(d);
      for (std::size_t c = 0; c < grid.size(); ++c) {
        grid.unflatten(c, idx);
        double v = w;
        for (std::size_t k = 0; k < d; ++k) v *= f[k][idx[k]];
        out.values[c] += v;
      }
    }
    return out;
  }
  const auto& rho = std::get<GridDensity>(mu0);
  if (rho.grid.dim() != d) throw ValidationError("heat_semigroup: density dimension does not match grid");
  std::vector<double> vals = rho.values;
  std::vector<std::size_t> shape = rho.grid.cells();
  for (std::size_t k = 0; k < d; ++k) {
    vals = detail::gauss_axis(vals, shape, k, rho.grid, grid, t);
    shape[k] = grid.cells()[k];
  }
  return GridDensity(grid, std::move(vals));
}

// ---------------------------------------------------------------------------
// Bound fits

struct BoundFit {
  double c = kInf;
  double gamma = kInf;
  double residual = kInf;        // 0 when the bounds hold with c <= c_max
  std::size_t excluded_cells = 0;  // tail cells skipped by the threshold
  std::size_t checked_cells = 0;
  double threshold = 1e-12;
  std::vector<double> per_time;  // constant needed at each snapshot time for the chosen gamma
};

struct FitOptions {
  double threshold = 1e-12;
  /// Largest admissible constant; the smallest gamma whose constant stays
  /// below it wins. Without a cap any gamma fits a thresholded grid with a
  /// huge constant.
  double c_max = 10.0;
};

using DensitySnapshots = std::vector<std::pair<double, GridDensity>>;

namespace detail {

struct GammaScore {
  double c = 1.0;
  std::size_t excluded = 0, checked = 0;
  std::vector<double> per_time;
};

template <typename Score>
BoundFit select_gamma(std::span<const double> gamma_search, const FitOptions& opt, Score&& score) {
  if (gamma_search.empty()) throw ValidationError("bound fit: empty gamma search grid");
  for (double g : gamma_search)
    if (!(g >= 1.0)) throw ValidationError("bound fit: gamma values must be >= 1");
  std::vector<double> gammas(gamma_search.begin(), gamma_search.end());
  std::sort(gammas.begin(), gammas.end());
  BoundFit best;
  best.threshold = opt.threshold;
  double best_c = kInf;
  for (double g : gammas) {
    const GammaScore s = score(g);
    auto fill = [&](BoundFit& f) {
      f.gamma = g;
      f.c = s.c;
      f.excluded_cells = s.excluded;
      f.checked_cells = s.checked;
      f.per_time = s.per_time;
    };
    if (s.c <= opt.c_max) {
      BoundFit f;
      f.threshold = opt.threshold;
      fill(f);
      f.residual = 0.0;
      return f;
    }
    if (s.c < best_c) {
      best_c = s.c;
      fill(best);
      best.residual = s.c / opt.c_max - 1.0;
    }
  }
  return best;
}

inline void check_snapshots(const DensitySnapshots& snaps) {
  if (snaps.empty()) throw ValidationError("bound fit: no density snapshots");
  for (const auto& [t, rho] : snaps)
    if (!(t > 0.0)) throw ValidationError("bound fit: snapshot times must be > 0");
}

}  // namespace detail

/// Smallest gamma on the search grid (then its minimal c) with
///   c^{-1} P_{t/gamma} mu0 <= rho_t <= c P_{gamma t} mu0
/// at every snapshot. The upper side is checked where P_{gamma t} mu0 exceeds
/// the threshold, the lower side where P_{t/gamma} mu0 does.
inline BoundFit fit_two_sided(const DensitySnapshots& snaps, const Measure& mu0,
                              std::span<const double> gamma_search, const FitOptions& opt = {}) {
  detail::check_snapshots(snaps);
  return detail::select_gamma(gamma_search, opt, [&](double g) {
    detail::GammaScore s;
    for (const auto& [t, rho] : snaps) {
      const GridDensity upper = heat_semigroup(mu0, g * t, rho.grid);
      const GridDensity lower = heat_semigroup(mu0, t / g, rho.grid);
      double need = 1.0;
      for (std::size_t c = 0; c < rho.values.size(); ++c) {
        const double r = rho.values[c];
        if (upper.values[c] > opt.threshold) {
          ++s.checked;
          need = std::max(need, r / upper.values[c]);
        } else {
          ++s.excluded;
        }
        if (lower.values[c] > opt.threshold) need = std::max(need, r > 0.0 ? lower.values[c] / r : kInf);
      }
      s.per_time.push_back(need);
      s.c = std::max(s.c, need);
    }
    return s;
  });
}

/// Smallest gamma (then minimal c) with |grad rho_t| <= c t^{-1/2} P_{gamma t} mu0
/// on cells where P_{gamma t} mu0 exceeds the threshold.
inline BoundFit fit_gradient_bound(const DensitySnapshots& snaps, const Measure& mu0,
                                   std::span<const double> gamma_search, const FitOptions& opt = {}) {
  detail::check_snapshots(snaps);
  std::vector<VectorField> grads;
  for (const auto& [t, rho] : snaps) grads.push_back(gradient(rho));
  return detail::select_gamma(gamma_search, opt, [&](double g) {
    detail::GammaScore s;
    for (std::size_t n = 0; n < snaps.size(); ++n) {
      const auto& [t, rho] = snaps[n];
      const GridDensity upper = heat_semigroup(mu0, g * t, rho.grid);
      const std::size_t d = rho.grid.dim();
      double sup = 0.0;
      for (std::size_t c = 0; c < rho.values.size(); ++c) {
        if (upper.values[c] > opt.threshold) {
          ++s.checked;
          const double gn = norm({grads[n].values.data() + c * d, d});
          sup = std::max(sup, std::sqrt(t) * gn / upper.values[c]);
        } else {
          ++s.excluded;
        }
      }
      s.per_time.push_back(sup);
      s.c = std::max(s.c, sup);
    }
    return s;
  });
}

}  // namespace mvlov
