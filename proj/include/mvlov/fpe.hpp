#pragma once

// Nonlinear Fokker-Planck solver for
//
//   d_t rho = Delta rho - div(B[rho] rho),   B[rho](x) = int b_t(x, y) rho(y) dy,
//
// (the sign that matches dX = B dt + sqrt(2) dW), and the backward PDE
//
//   d_t u + Delta u - lambda u + b . grad u = -b,   u(T) = 0,
//
// whose solution defines the change of variables x -> x + u(t, x).

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mvlov/common.hpp"
#include "mvlov/density.hpp"
#include "mvlov/grid.hpp"
#include "mvlov/kernels.hpp"
#include "mvlov/particles.hpp"
#include "mvlov/rng.hpp"

namespace mvlov {

// ---------------------------------------------------------------------------
// Convolution drift

namespace detail {

// Integral of f over the cell centred at `centre` with widths h, using
// (2^levels)^d midpoint subcells. f receives z = x - y.
inline void cell_integral(const KernelSpec& k, double t, std::span<const double> centre,
                          std::span<const double> h, int levels, std::span<double> out) {
  const std::size_t d = centre.size();
  const std::size_t s = std::size_t{1} << levels;
  std::size_t total = 1;
  for (std::size_t a = 0; a < d; ++a) total *= s;
  std::vector<double> z(d), zero(d, 0.0), b(d);
  std::fill(out.begin(), out.end(), 0.0);
  double sub_vol = 1.0;
  for (std::size_t a = 0; a < d; ++a) sub_vol *= h[a] / static_cast<double>(s);
  for (std::size_t c = 0; c < total; ++c) {
    std::size_t rem = c;
    for (std::size_t a = d; a-- > 0;) {
      const std::size_t j = rem % s;
      rem /= s;
      z[a] = centre[a] - 0.5 * h[a] + (static_cast<double>(j) + 0.5) * h[a] / static_cast<double>(s);
    }
    k.eval(t, z, zero, b);
    for (std::size_t a = 0; a < d; ++a) out[a] += b[a] * sub_vol;
  }
}

}  // namespace detail

/// Per-offset cell integrals K[o] = int_{cell at o h} b_t(z, 0) dz for a
/// translation-invariant kernel. Offsets span [-(n-1), n-1] per axis.
struct DriftStencil {
  std::vector<std::size_t> extent;  // 2n - 1 per axis
  std::vector<double> values;       // [offset][d]

  static DriftStencil build(const KernelSpec& k, double t, const Grid& g, int levels = 4) {
    const std::size_t d = g.dim();
    DriftStencil st;
    std::size_t total = 1;
    for (std::size_t a = 0; a < d; ++a) {
      st.extent.push_back(2 * g.cells()[a] - 1);
      total *= st.extent.back();
    }
    st.values.assign(total * d, 0.0);
    std::vector<double> h(d), centre(d), b(d), zero(d, 0.0);
    for (std::size_t a = 0; a < d; ++a) h[a] = g.spacing(a);
    const double vol = g.cell_volume();
    for (std::size_t o = 0; o < total; ++o) {
      std::size_t rem = o;
      bool near = true, origin = true;
      for (std::size_t a = d; a-- > 0;) {
        const auto off = static_cast<long>(rem % st.extent[a]) - static_cast<long>(g.cells()[a] - 1);
        rem /= st.extent[a];
        centre[a] = static_cast<double>(off) * h[a];
        near = near && std::abs(off) <= 1;
        origin = origin && off == 0;
      }
      auto out = std::span<double>(st.values).subspan(o * d, d);
      if (origin && k.is_odd()) continue;  // odd kernels integrate to zero over the centred cell
      if (near) {
        detail::cell_integral(k, t, centre, h, levels, out);
      } else {
        k.eval(t, centre, zero, b);
        for (std::size_t a = 0; a < d; ++a) out[a] = b[a] * vol;
      }
    }
    return st;
  }
};

/// B(x_i) = sum_j rho_j int_{cell j} b_t(x_i, y) dy. Translation-invariant
/// kernels use a precomputed stencil with refined quadrature on the cells
/// next to the singularity; other kernels use the midpoint rule.
inline VectorField convolve_drift(const GridDensity& rho, const KernelSpec& k, double t = 0.0,
                                  const DriftStencil* stencil = nullptr) {
  const Grid& g = rho.grid;
  const std::size_t d = g.dim(), M = g.size();
  VectorField B(g);
  if (k.is_zero()) return B;
  if (!k.translation_invariant()) {
    std::vector<double> x(d), y(d), b(d);
    const double vol = g.cell_volume();
    parallel_for(M, [&](std::size_t lo, std::size_t hi) {
      std::vector<double> xl(d), yl(d), bl(d), acc(d * M);
      for (std::size_t i = lo; i < hi; ++i) {
        g.center_of(i, xl);
        for (std::size_t j = 0; j < M; ++j) {
          g.center_of(j, yl);
          k.eval(t, xl, yl, bl);
          for (std::size_t a = 0; a < d; ++a) acc[a * M + j] = bl[a] * rho.values[j] * vol;
        }
        for (std::size_t a = 0; a < d; ++a)
          B.values[i * d + a] = pairwise_sum(std::span<const double>(acc).subspan(a * M, M));
      }
    });
    return B;
  }
  std::optional<DriftStencil> own;
  if (!stencil) {
    own = DriftStencil::build(k, t, g);
    stencil = &*own;
  }
  const auto& st = *stencil;
  parallel_for(M, [&](std::size_t lo, std::size_t hi) {
    std::vector<std::size_t> ii(d), jj(d);
    std::vector<double> acc(d, 0.0);
    for (std::size_t i = lo; i < hi; ++i) {
      g.unflatten(i, ii);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t j = 0; j < M; ++j) {
        const double r = rho.values[j];
        if (r == 0.0) continue;
        g.unflatten(j, jj);
        std::size_t o = 0;
        for (std::size_t a = 0; a < d; ++a)
          o = o * st.extent[a] + (ii[a] + g.cells()[a] - 1 - jj[a]);
        for (std::size_t a = 0; a < d; ++a) acc[a] += st.values[o * d + a] * r;
      }
      for (std::size_t a = 0; a < d; ++a) B.values[i * d + a] = acc[a];
    }
  });
  return B;
}

/// Piecewise-constant-in-time drift fields; the field with the largest time
/// not exceeding t is used.
struct FrozenDrift {
  std::vector<double> times;
  std::vector<VectorField> fields;

  const VectorField& field_at(double t) const {
    if (fields.empty()) throw ValidationError("frozen drift has no fields");
    std::size_t k = 0;
    while (k + 1 < times.size() && times[k + 1] <= t + 1e-12) ++k;
    return fields[k];
  }

  void at(double t, std::span<const double> x, std::span<double> out) const { field_at(t).at(x, out); }

  FieldDrift as_field_drift() const {
    return [this](double t, std::span<const double> x, std::span<double> out) { at(t, x, out); };
  }

  /// Drift of a frozen measure flow: B_s = int b_s(., y) mu_s(dy).
  static FrozenDrift from_flow(const DensitySnapshots& flow, const KernelSpec& k) {
    FrozenDrift fd;
    for (const auto& [t, rho] : flow) {
      fd.times.push_back(t);
      fd.fields.push_back(convolve_drift(rho, k, t));
    }
    return fd;
  }
};

/// Girsanov weights against the drift generated by a frozen measure flow.
inline GirsanovResult girsanov_weight(const Trajectory& tr, const KernelSpec& k, const DensitySnapshots& flow) {
  if (tr.increments.empty()) throw ValidationError("girsanov_weight: trajectory has no stored Brownian increments");
  const FrozenDrift fd = FrozenDrift::from_flow(flow, k);
  return girsanov_weight(tr, fd.as_field_drift());
}

// ---------------------------------------------------------------------------
// Forward nonlinear FPE

enum class Boundary { no_flux, periodic };

struct FpeConfig {
  Grid grid;
  double dt = 0.0;  // 0: largest stable step
  double T = 1.0;
  KernelSpec kernel;
  Boundary boundary = Boundary::no_flux;
  GridDensity initial;
  std::vector<double> snapshot_times;  // defaults to {T}

  /// Drift bound entering the step restriction.
  double max_drift() const {
    const auto b = kernel.component_bound();
    if (!b) throw ValidationError("fpe: kernel has no component bound; truncate it first");
    return *b;
  }

  /// dt <= min(h^2 / (4 d), h / (4 d max_drift)): every cell keeps at least
  /// half its mass against diffusion and half against upwind outflow.
  double stable_dt() const {
    const double h = grid.min_spacing(), d = static_cast<double>(grid.dim());
    double dt_max = h * h / (4.0 * d);
    const double md = max_drift();
    if (md > 0.0) dt_max = std::min(dt_max, h / (4.0 * d * md));
    return dt_max;
  }
};

struct FpeResult {
  DensitySnapshots snapshots;
  double max_mass_drift = 0.0;  // max over steps of |mass - initial mass|
  double min_value = 0.0;
  std::size_t steps = 0;
  double dt = 0.0;
};

/// Conservative finite-volume march: centred diffusive flux, first-order
/// upwind advective flux with face velocity averaged from the neighbouring
/// cells, drift recomputed from the start-of-step density.
inline FpeResult fpe_solve(const FpeConfig& cfg) {
  const Grid& g = cfg.grid;
  const std::size_t d = g.dim(), M = g.size();
  require_same_grid(g, cfg.initial.grid, "fpe_solve");
  const double dt_max = cfg.stable_dt();
  const double dt = cfg.dt > 0.0 ? cfg.dt : dt_max;
  if (dt > dt_max * (1.0 + 1e-12))
    throw ValidationError("fpe: dt = " + std::to_string(dt) + " violates the stability bound " +
                          std::to_string(dt_max));
  for (double v : cfg.initial.values)
    if (!(v >= 0.0)) throw ValidationError("fpe: initial density must be nonnegative");
  const double T = cfg.T;
  const auto K = static_cast<std::size_t>(std::ceil(T / dt - 1e-9));
  const double step = T / static_cast<double>(K);  // land exactly on T
  std::vector<double> snap_times = cfg.snapshot_times.empty() ? std::vector<double>{T} : cfg.snapshot_times;
  std::vector<std::size_t> snap_steps;
  for (double t : snap_times) {
    if (t < 0.0 || t > T * (1 + 1e-12)) throw ValidationError("fpe: snapshot time outside [0, T]");
    snap_steps.push_back(static_cast<std::size_t>(std::llround(t / step)));
  }

  FpeResult res;
  res.dt = step;
  res.steps = K;
  std::vector<double> rho = cfg.initial.values, flux(M + 1), next(M);
  const double mass0 = pairwise_sum(rho) * g.cell_volume();
  std::optional<DriftStencil> stencil;
  if (!cfg.kernel.is_zero() && cfg.kernel.translation_invariant() && !cfg.kernel.has_time_scaling())
    stencil = DriftStencil::build(cfg.kernel, 0.0, g);

  auto snapshot = [&](std::size_t k) {
    for (std::size_t s = 0; s < snap_steps.size(); ++s)
      if (snap_steps[s] == k) res.snapshots.emplace_back(snap_times[s], GridDensity(g, rho));
  };
  snapshot(0);
  double min_value = *std::min_element(rho.begin(), rho.end());
  const double neg_tol = 1e-13 * *std::max_element(rho.begin(), rho.end());
  const bool drift = !cfg.kernel.is_zero();
  VectorField B(g);
  for (std::size_t k = 0; k < K; ++k) {
    const double t = static_cast<double>(k) * step;
    if (drift) B = convolve_drift(GridDensity(g, rho), cfg.kernel, t, stencil ? &*stencil : nullptr);
    next = rho;
    for (std::size_t a = 0; a < d; ++a) {
      const std::size_t n = g.cells()[a], s = g.stride(a), outer = M / (n * s);
      const double h = g.spacing(a), lam = step / h, inv_h = 1.0 / h;
      const bool wrap = cfg.boundary == Boundary::periodic && n > 1;
      auto face = [&](std::size_t c, std::size_t up) {
        const double v = drift ? 0.5 * (B.values[c * d + a] + B.values[up * d + a]) : 0.0;
        const double adv = v > 0.0 ? v * rho[c] : v * rho[up];
        const double f = lam * (adv - (rho[up] - rho[c]) * inv_h);
        next[c] -= f;
        next[up] += f;
      };
      // c = (o n + i) s + r; the last face of each line is a wall unless periodic.
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t r = 0; r < s; ++r) {
            const std::size_t c = (o * n + i) * s + r;
            if (i + 1 < n)
              face(c, c + s);
            else if (wrap)
              face(c, c - (n - 1) * s);
          }
    }
    rho.swap(next);
    for (std::size_t c = 0; c < M; ++c) {
      if (rho[c] < -neg_tol) {
        throw NumericalAbort("fpe: negative density " + std::to_string(rho[c]) + " in cell " +
                             std::to_string(c) + " at step " + std::to_string(k + 1));
      }
      min_value = std::min(min_value, rho[c]);
    }
    const double mass = pairwise_sum(rho) * g.cell_volume();
    res.max_mass_drift = std::max(res.max_mass_drift, std::abs(mass - mass0));
    snapshot(k + 1);
  }
  res.min_value = min_value;
  return res;
}

/// Density on grid from an isotropic Gaussian N(mean, var I), sampled at
/// cell centres.
inline GridDensity gaussian_density(const Grid& g, std::span<const double> mean, double var) {
  GridDensity out(g);
  const std::size_t d = g.dim();
  std::vector<double> x(d);
  const double norm1 = std::pow(2.0 * std::numbers::pi * var, -0.5 * static_cast<double>(d));
  for (std::size_t c = 0; c < g.size(); ++c) {
    g.center_of(c, x);
    double r2 = 0.0;
    for (std::size_t k = 0; k < d; ++k) r2 += (x[k] - mean[k]) * (x[k] - mean[k]);
    out.values[c] = norm1 * std::exp(-r2 / (2.0 * var));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backward PDE

struct ZvonkinOptions {
  double dt = 0.0;  // 0: upwind-stable step dt <= h / (2 max|b|), capped at T / 100
  Boundary boundary = Boundary::periodic;
  std::size_t store_every = 0;  // 0: keep only t = 0 and t = T
};

struct ZvonkinSolution {
  Grid grid;
  double lambda = 1.0;
  double T = 0.0;
  double dt = 0.0;
  std::vector<double> times;       // stored slices, descending from T
  std::vector<VectorField> u;      // u(t_k, .) with d components
  double sup_u = 0.0;              // over the whole space-time grid
  double sup_grad_u = 0.0;         // Frobenius norm of the Jacobian

  const VectorField& at_zero() const { return u.back(); }
};

namespace detail {

inline Eigen::SparseMatrix<double> shifted_laplacian(const Grid& g, double dt, double lambda, Boundary bc) {
  const std::size_t d = g.dim(), M = g.size();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(M * (2 * d + 1));
  std::vector<std::size_t> idx(d);
  std::vector<double> diag(M, 1.0 + dt * lambda);
  for (std::size_t c = 0; c < M; ++c) {
    g.unflatten(c, idx);
    for (std::size_t a = 0; a < d; ++a) {
      const std::size_t n = g.cells()[a], s = g.stride(a);
      const double w = dt / (g.spacing(a) * g.spacing(a));
      std::size_t up;
      if (idx[a] + 1 < n)
        up = c + s;
      else if (bc == Boundary::periodic && n > 2)
        up = c - (n - 1) * s;
      else
        continue;
      trip.emplace_back(static_cast<int>(c), static_cast<int>(up), -w);
      trip.emplace_back(static_cast<int>(up), static_cast<int>(c), -w);
      diag[c] += w;
      diag[up] += w;
    }
  }
  for (std::size_t c = 0; c < M; ++c) trip.emplace_back(static_cast<int>(c), static_cast<int>(c), diag[c]);
  Eigen::SparseMatrix<double> A(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(M));
  A.setFromTriplets(trip.begin(), trip.end());
  return A;
}

inline std::size_t neighbour(const Grid& g, std::size_t c, std::span<const std::size_t> idx, std::size_t a,
                             int dir, Boundary bc) {
  const std::size_t n = g.cells()[a], s = g.stride(a);
  if (dir > 0) {
    if (idx[a] + 1 < n) return c + s;
    return bc == Boundary::periodic ? c - (n - 1) * s : c;
  }
  if (idx[a] > 0) return c - s;
  return bc == Boundary::periodic ? c + (n - 1) * s : c;
}

// max over cells of the Frobenius norm of the centred-difference Jacobian.
inline double sup_jacobian(const Grid& g, const std::vector<Eigen::VectorXd>& u, Boundary bc) {
  const std::size_t d = g.dim(), M = g.size();
  std::vector<std::size_t> idx(d);
  double best = 0.0;
  for (std::size_t c = 0; c < M; ++c) {
    g.unflatten(c, idx);
    double fro = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
      const std::size_t p = neighbour(g, c, idx, a, +1, bc), m = neighbour(g, c, idx, a, -1, bc);
      const double span = (p == c || m == c) ? g.spacing(a) : 2.0 * g.spacing(a);
      for (std::size_t comp = 0; comp < u.size(); ++comp) {
        const double v = (u[comp][static_cast<Eigen::Index>(p)] - u[comp][static_cast<Eigen::Index>(m)]) / span;
        fro += v * v;
      }
    }
    best = std::max(best, std::sqrt(fro));
  }
  return best;
}

}  // namespace detail

/// Marches tau = T - t forward: (I - dt (Delta - lambda)) u^{k+1} = u^k + dt (b . grad u^k + b),
/// implicit in diffusion and the lambda term, explicit upwind in b . grad u.
inline ZvonkinSolution zvonkin_solve(const FrozenDrift& b, double lambda, const Grid& grid, double T,
                                     const ZvonkinOptions& opt = {}) {
  if (!(lambda >= 1.0)) throw ValidationError("zvonkin_solve: lambda must be >= 1");
  if (!(T > 0.0)) throw ValidationError("zvonkin_solve: T must be > 0");
  for (const auto& f : b.fields) require_same_grid(grid, f.grid, "zvonkin_solve");
  const std::size_t d = grid.dim(), M = grid.size();
  double bmax = 0.0;
  for (const auto& f : b.fields)
    for (double v : f.values) {
      if (!std::isfinite(v)) throw ValidationError("zvonkin_solve: drift must be finite (truncate it)");
      bmax = std::max(bmax, std::abs(v));
    }
  double dt = opt.dt;
  const double dt_adv = bmax > 0.0 ? 0.5 * grid.min_spacing() / bmax : kInf;
  if (dt <= 0.0) dt = std::min(dt_adv, T / 100.0);
  if (dt > dt_adv * (1 + 1e-12)) throw ValidationError("zvonkin_solve: dt violates the upwind bound");
  const auto K = static_cast<std::size_t>(std::ceil(T / dt - 1e-9));
  dt = T / static_cast<double>(K);

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
  solver.compute(detail::shifted_laplacian(grid, dt, lambda, opt.boundary));
  if (solver.info() != Eigen::Success) throw NumericalAbort("zvonkin_solve: factorisation failed");

  ZvonkinSolution sol;
  sol.grid = grid;
  sol.lambda = lambda;
  sol.T = T;
  sol.dt = dt;
  std::vector<Eigen::VectorXd> u(d, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(M)));
  auto store = [&](double t) {
    VectorField f(grid);
    for (std::size_t c = 0; c < M; ++c)
      for (std::size_t a = 0; a < d; ++a) f.values[c * d + a] = u[a][static_cast<Eigen::Index>(c)];
    sol.times.push_back(t);
    sol.u.push_back(std::move(f));
  };
  store(T);
  std::vector<std::size_t> idx(d);
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(M));
  for (std::size_t k = 0; k < K; ++k) {
    const double t = T - static_cast<double>(k) * dt;
    const VectorField& bf = b.field_at(std::max(0.0, t - dt));
    std::vector<Eigen::VectorXd> next(d);
    for (std::size_t comp = 0; comp < d; ++comp) {
      for (std::size_t c = 0; c < M; ++c) {
        grid.unflatten(c, idx);
        double adv = 0.0;
        for (std::size_t a = 0; a < d; ++a) {
          const double v = bf.values[c * d + a];
          if (v == 0.0) continue;
          const std::size_t nb = detail::neighbour(grid, c, idx, a, v > 0.0 ? +1 : -1, opt.boundary);
          const double du = (u[comp][static_cast<Eigen::Index>(nb)] - u[comp][static_cast<Eigen::Index>(c)]) /
                            grid.spacing(a);
          adv += std::abs(v) * du;
        }
        rhs[static_cast<Eigen::Index>(c)] = u[comp][static_cast<Eigen::Index>(c)] + dt * (adv + bf.values[c * d + comp]);
      }
      next[comp] = solver.solve(rhs);
    }
    u.swap(next);
    for (const auto& v : u) sol.sup_u = std::max(sol.sup_u, v.cwiseAbs().maxCoeff());
    sol.sup_grad_u = std::max(sol.sup_grad_u, detail::sup_jacobian(grid, u, opt.boundary));
    const bool last = k + 1 == K;
    if (last || (opt.store_every > 0 && (k + 1) % opt.store_every == 0))
      store(last ? 0.0 : T - static_cast<double>(k + 1) * dt);
  }
  return sol;
}

/// Time-independent convenience overload.
inline ZvonkinSolution zvonkin_solve(const VectorField& b, double lambda, double T,
                                     const ZvonkinOptions& opt = {}) {
  FrozenDrift fd;
  fd.times = {0.0};
  fd.fields = {b};
  return zvonkin_solve(fd, lambda, b.grid, T, opt);
}

/// Monte Carlo value of <u(0), rho0> from the Feynman-Kac representation
/// u(0, x) = E_x int_0^T exp(-lambda s) b(X_s) ds with dX = b dt + sqrt(2) dW,
/// paths wrapped periodically onto the grid box. One estimate per component.
inline std::vector<MeanEstimate> feynman_kac_pairing(const VectorField& b, double lambda, double T,
                                                     const GridDensity& rho0, std::size_t paths,
                                                     double dt, std::uint64_t seed) {
  const Grid& g = b.grid;
  require_same_grid(g, rho0.grid, "feynman_kac_pairing");
  const std::size_t d = g.dim(), M = g.size();
  std::vector<double> cdf(M);
  double acc = 0.0;
  for (std::size_t c = 0; c < M; ++c) cdf[c] = (acc += rho0.values[c]);
  const double mass = rho0.mass();
  const NormalStream normals(seed, StreamPurpose::step_noise);
  const NormalStream uniforms(seed, StreamPurpose::initial_law);
  const std::size_t K = steps_in(T, dt);
  std::vector<std::vector<double>> samples(d, std::vector<double>(paths));
  std::vector<double> x(d), bx(d), xi(d), integral(d);
  std::vector<std::size_t> idx(d);
  for (std::size_t p = 0; p < paths; ++p) {
    const double u = uniforms.uniform(p, 0) * acc;
    const auto cell = static_cast<std::size_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    g.unflatten(std::min(cell, M - 1), idx);
    for (std::size_t a = 0; a < d; ++a)
      x[a] = g.center(a, idx[a]) + (uniforms.uniform(p, a + 1) - 0.5) * g.spacing(a);
    std::fill(integral.begin(), integral.end(), 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      const double s = static_cast<double>(k) * dt;
      b.at(x, bx);
      const double disc = std::exp(-lambda * s) * dt;
      for (std::size_t a = 0; a < d; ++a) integral[a] += disc * bx[a];
      normals.fill(p, k, xi);
      for (std::size_t a = 0; a < d; ++a) {
        x[a] += bx[a] * dt + std::numbers::sqrt2 * std::sqrt(dt) * xi[a];
        const double L = g.hi()[a] - g.lo()[a];
        x[a] = g.lo()[a] + std::fmod(std::fmod(x[a] - g.lo()[a], L) + L, L);
      }
    }
    for (std::size_t a = 0; a < d; ++a) samples[a][p] = integral[a] * mass;
  }
  std::vector<MeanEstimate> out;
  for (const auto& s : samples) out.push_back(mean_and_se(s));
  return out;
}

/// <u(0), rho0> from the PDE side.
inline std::vector<double> pde_pairing(const ZvonkinSolution& sol, const GridDensity& rho0) {
  const std::size_t d = sol.grid.dim();
  std::vector<double> out(d, 0.0);
  const auto& u0 = sol.at_zero();
  for (std::size_t c = 0; c < sol.grid.size(); ++c)
    for (std::size_t a = 0; a < d; ++a) out[a] += u0.values[c * d + a] * rho0.values[c] * sol.grid.cell_volume();
  return out;
}

/// int_0^T int int |b_t(x, y)| mu_t(dy) mu_t(dx) dt on the grid (left Riemann
/// sum over the snapshots); finite values confirm the integrability class.
inline double interaction_integral(const DensitySnapshots& flow, const KernelSpec& k) {
  double total = 0.0;
  for (std::size_t s = 0; s + 1 < flow.size(); ++s) {
    const auto& [t, rho] = flow[s];
    const double dt = flow[s + 1].first - t;
    const Grid& g = rho.grid;
    const std::size_t d = g.dim(), M = g.size();
    std::vector<double> x(d), y(d), b(d);
    const double vol = g.cell_volume();
    double inner = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
      if (rho.values[i] == 0.0) continue;
      g.center_of(i, x);
      for (std::size_t j = 0; j < M; ++j) {
        if (rho.values[j] == 0.0) continue;
        g.center_of(j, y);
        k.eval(t, x, y, b);
        inner += norm(b) * rho.values[i] * rho.values[j] * vol * vol;
      }
    }
    total += inner * dt;
  }
  return total;
}

}  // namespace mvlov
