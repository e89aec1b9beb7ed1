#pragma once

// Interacting particle system
//
//   dX^i = (1/N) sum_j b_t(X^i, X^j) dt + sigma(X^i) dW^i,   i = 0..N-1,
//
// stepped with explicit Euler-Maruyama. Noise comes from counter-based
// streams keyed by (seed, particle, step); the per-particle drift sum uses a
// fixed pairwise tree. Together these make every run bit-reproducible for any
// worker count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvlov/common.hpp"
#include "mvlov/kernels.hpp"
#include "mvlov/rng.hpp"

namespace mvlov {

struct NoiseState {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

struct ParticleEnsemble {
  std::size_t N = 0;
  std::size_t d = 0;
  std::vector<double> positions;  // N x d row-major
  double time = 0.0;
  NoiseState noise;

  ParticleEnsemble() = default;
  ParticleEnsemble(std::size_t n, std::size_t dim, std::vector<double> pos, double t = 0.0,
                   NoiseState ns = {})
      : N(n), d(dim), positions(std::move(pos)), time(t), noise(ns) {
    if (d == 0) throw ValidationError("ensemble dimension must be >= 1");
    if (N < 2) throw ValidationError("ensemble needs N >= 2 particles");
    if (positions.size() != N * d) throw ValidationError("ensemble: positions must hold N * d values");
    if (!all_finite(positions)) throw NumericalAbort("ensemble: non-finite particle position");
  }

  std::span<const double> particle(std::size_t i) const { return {positions.data() + i * d, d}; }
  std::span<double> particle(std::size_t i) { return {positions.data() + i * d, d}; }

  /// Coordinate k of every particle.
  std::vector<double> axis(std::size_t k) const {
    std::vector<double> out(N);
    for (std::size_t i = 0; i < N; ++i) out[i] = positions[i * d + k];
    return out;
  }
};

// ---------------------------------------------------------------------------
// Diffusion and initial laws

enum class DiffusionKind { constant_sqrt2, diagonal_state };

/// sigma = sqrt(2) I, or the diagonal state-dependent test case
/// sigma_kk(x) = sqrt(2) (1 + 0.25 sin(x_k) / (1 + |x|)).
struct Diffusion {
  DiffusionKind kind = DiffusionKind::constant_sqrt2;
  double c0 = std::numbers::sqrt2 * 1.25;
  double gamma = 1.0;
  int profile = 0;

  static Diffusion constant_sqrt2() { return {}; }
  static Diffusion diagonal_state(double c0, double gamma = 1.0, int profile = 0) {
    Diffusion df{DiffusionKind::diagonal_state, c0, gamma, profile};
    df.validate();
    return df;
  }

  /// The diagonal profile takes values in (sqrt2 * 0.75, sqrt2 * 1.25).
  void validate() const {
    if (kind != DiffusionKind::diagonal_state) return;
    if (profile != 0) throw ValidationError("diffusion: unknown diagonal profile id");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("diffusion: Hoelder exponent must lie in (0, 1]");
    const double lo = std::numbers::sqrt2 * 0.75, hi = std::numbers::sqrt2 * 1.25;
    if (!(1.0 / c0 <= lo && hi <= c0))
      throw ValidationError("diffusion: ellipticity constant c0 = " + std::to_string(c0) +
                            " does not bracket the profile range [1.0607, 1.7678]");
  }

  void diag(std::span<const double> x, std::span<double> out) const {
    if (kind == DiffusionKind::constant_sqrt2) {
      std::fill(out.begin(), out.end(), std::numbers::sqrt2);
      return;
    }
    const double r = norm(x);
    for (std::size_t k = 0; k < x.size(); ++k)
      out[k] = std::numbers::sqrt2 * (1.0 + 0.25 * std::sin(x[k]) / (1.0 + r));
  }
};

enum class InitialKind { point, gaussian, uniform_box };

struct InitialLaw {
  InitialKind kind = InitialKind::point;
  std::vector<double> x0;                // point
  std::vector<double> mean;              // gaussian
  std::vector<double> cov;               // gaussian, d x d row-major
  std::vector<double> lo, hi;            // uniform_box

  static InitialLaw point(std::vector<double> x) { return {InitialKind::point, std::move(x), {}, {}, {}, {}}; }
  static InitialLaw gaussian(std::vector<double> m, std::vector<double> c) {
    return {InitialKind::gaussian, {}, std::move(m), std::move(c), {}, {}};
  }
  /// N(mean, var * I).
  static InitialLaw isotropic(std::vector<double> m, double var) {
    const std::size_t d = m.size();
    std::vector<double> c(d * d, 0.0);
    for (std::size_t k = 0; k < d; ++k) c[k * d + k] = var;
    return gaussian(std::move(m), std::move(c));
  }
  static InitialLaw uniform_box(std::vector<double> a, std::vector<double> b) {
    return {InitialKind::uniform_box, {}, {}, {}, std::move(a), std::move(b)};
  }

  void validate(std::size_t d) const {
    switch (kind) {
      case InitialKind::point:
        if (x0.size() != d) throw ValidationError("initial point must have d coordinates");
        break;
      case InitialKind::gaussian:
        if (mean.size() != d || cov.size() != d * d)
          throw ValidationError("gaussian initial law needs d means and a d x d covariance");
        (void)cholesky(d);
        break;
      case InitialKind::uniform_box:
        if (lo.size() != d || hi.size() != d) throw ValidationError("uniform_box needs d-dimensional lo/hi");
        for (std::size_t k = 0; k < d; ++k)
          if (!(hi[k] > lo[k])) throw ValidationError("uniform_box requires hi > lo");
        break;
    }
  }

  /// Lower-triangular factor of cov.
  std::vector<double> cholesky(std::size_t d) const {
    std::vector<double> L(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        double s = cov[i * d + j];
        for (std::size_t k = 0; k < j; ++k) s -= L[i * d + k] * L[j * d + k];
        if (i == j) {
          if (!(s > 0.0)) throw ValidationError("gaussian covariance must be positive definite");
          L[i * d + i] = std::sqrt(s);
        } else {
          L[i * d + j] = s / L[j * d + j];
        }
      }
    }
    return L;
  }

  std::vector<double> sample(std::size_t N, std::size_t d, std::uint64_t seed) const {
    validate(d);
    std::vector<double> pos(N * d);
    const NormalStream stream(seed, StreamPurpose::initial_law);
    const std::vector<double> L = kind == InitialKind::gaussian ? cholesky(d) : std::vector<double>{};
    std::vector<double> z(d);
    for (std::size_t i = 0; i < N; ++i) {
      auto x = std::span<double>(pos).subspan(i * d, d);
      switch (kind) {
        case InitialKind::point:
          std::copy(x0.begin(), x0.end(), x.begin());
          break;
        case InitialKind::gaussian:
          stream.fill(i, 0, z);
          for (std::size_t a = 0; a < d; ++a) {
            double v = mean[a];
            for (std::size_t b = 0; b <= a; ++b) v += L[a * d + b] * z[b];
            x[a] = v;
          }
          break;
        case InitialKind::uniform_box:
          for (std::size_t a = 0; a < d; ++a)
            x[a] = lo[a] + (hi[a] - lo[a]) * stream.uniform(i, a);
          break;
      }
    }
    return pos;
  }
};

// ---------------------------------------------------------------------------
// Mean-field drift

namespace detail {

struct InvPowAlpha1 {
  double operator()(double r2) const { return 1.0 / std::sqrt(r2); }
};
struct InvPowAlpha15 {
  double operator()(double r2) const {
    const double r = std::sqrt(r2);
    return 1.0 / (r * std::sqrt(r));
  }
};
struct InvPowAlpha0 {
  double operator()(double) const { return 1.0; }
};
struct InvPowGeneric {
  double half_alpha;
  double operator()(double r2) const { return std::pow(r2, -half_alpha); }
};

// Contributions b(X^i, X^j) for all j into buf (component-major, stride N),
// then one pairwise sum per component.
template <std::size_t D, bool Rotational, typename InvPow>
void power_law_drifts(std::span<const double> pos, std::size_t N, double kappa, InvPow inv_pow,
                      std::optional<double> trunc, std::span<double> out, unsigned workers) {
  std::array<std::vector<double>, D> coord;
  for (std::size_t k = 0; k < D; ++k) {
    coord[k].resize(N);
    for (std::size_t j = 0; j < N; ++j) coord[k][j] = pos[j * D + k];
  }
  const double n = trunc.value_or(kInf);
  const bool clamp = trunc.has_value();
  const double invN = 1.0 / static_cast<double>(N);
  parallel_for(
      N,
      [&](std::size_t begin, std::size_t end) {
        std::array<std::vector<double>, D> buf;
        for (auto& b : buf) b.resize(N);
        for (std::size_t i = begin; i < end; ++i) {
          std::array<double, D> xi{};
          for (std::size_t k = 0; k < D; ++k) xi[k] = coord[k][i];
          for (std::size_t j = 0; j < N; ++j) {
            std::array<double, D> dx{};
            double r2 = 0.0;
            for (std::size_t k = 0; k < D; ++k) {
              dx[k] = xi[k] - coord[k][j];
              r2 += dx[k] * dx[k];
            }
            const bool off = r2 > 0.0;
            const double s = off ? kappa * inv_pow(off ? r2 : 1.0) : 0.0;
            if constexpr (Rotational && D == 2) {
              double bx = -s * dx[1], by = s * dx[0];
              if (clamp) {
                bx = std::clamp(bx, -n, n);
                by = std::clamp(by, -n, n);
              }
              buf[0][j] = bx;
              buf[1][j] = by;
            } else {
              for (std::size_t k = 0; k < D; ++k) {
                double v = s * dx[k];
                if (clamp) v = std::clamp(v, -n, n);
                buf[k][j] = v;
              }
            }
          }
          for (std::size_t k = 0; k < D; ++k) out[i * D + k] = pairwise_sum(buf[k]) * invN;
        }
      },
      workers);
}

template <std::size_t D, bool Rotational>
void power_law_drifts_dispatch(std::span<const double> pos, std::size_t N, const PowerLaw& pl,
                               double scale, std::optional<double> trunc, std::span<double> out,
                               unsigned workers) {
  const double kappa = pl.kappa * scale;
  if (pl.alpha == 1.0)
    power_law_drifts<D, Rotational>(pos, N, kappa, InvPowAlpha1{}, trunc, out, workers);
  else if (pl.alpha == 1.5)
    power_law_drifts<D, Rotational>(pos, N, kappa, InvPowAlpha15{}, trunc, out, workers);
  else if (pl.alpha == 0.0)
    power_law_drifts<D, Rotational>(pos, N, kappa, InvPowAlpha0{}, trunc, out, workers);
  else
    power_law_drifts<D, Rotational>(pos, N, kappa, InvPowGeneric{0.5 * pl.alpha}, trunc, out, workers);
}

// d = 1, alpha = 1: b(x, y) = v * sign(x - y), so the sum is a rank count.
inline void sign_kernel_drifts(std::span<const double> pos, std::size_t N, double v,
                               std::span<double> out) {
  std::vector<double> sorted(pos.begin(), pos.end());
  std::sort(sorted.begin(), sorted.end());
  const double invN = 1.0 / static_cast<double>(N);
  for (std::size_t i = 0; i < N; ++i) {
    const auto lower = std::lower_bound(sorted.begin(), sorted.end(), pos[i]) - sorted.begin();
    const auto upper = sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), pos[i]);
    out[i] = v * static_cast<double>(lower - upper) * invN;
  }
}

}  // namespace detail

/// Drift for every particle into out (N x d). Uses the rank-count path for
/// the d = 1, alpha = 1 radial kernel unless force_generic is set.
inline void mean_field_drifts(double t, const ParticleEnsemble& ens, const KernelSpec& k,
                              std::span<double> out, unsigned workers = worker_count(),
                              bool force_generic = false) {
  const std::size_t N = ens.N, d = ens.d;
  if (out.size() != N * d) throw ValidationError("drift buffer must hold N * d values");
  if (!all_finite(ens.positions)) throw NumericalAbort("mean_field_drift: non-finite particle position");
  if (k.is_zero()) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  if (const auto* pl = k.power_law_form()) {
    const double scale = k.time_scale(t);
    if (pl->direction == Direction::rotational && d != 2)
      throw ValidationError("rotational kernels are defined for d = 2 only");
    if (d == 1 && pl->alpha == 1.0 && !force_generic) {
      const double one = 1.0, zero = 0.0;
      const double v = k.eval(t, std::span<const double>(&one, 1), std::span<const double>(&zero, 1))[0];
      detail::sign_kernel_drifts(ens.positions, N, v, out);
      return;
    }
    const auto trunc = k.truncation();
    switch (d) {
      case 1:
        detail::power_law_drifts_dispatch<1, false>(ens.positions, N, *pl, scale, trunc, out, workers);
        return;
      case 2:
        if (pl->direction == Direction::rotational)
          detail::power_law_drifts_dispatch<2, true>(ens.positions, N, *pl, scale, trunc, out, workers);
        else
          detail::power_law_drifts_dispatch<2, false>(ens.positions, N, *pl, scale, trunc, out, workers);
        return;
      case 3:
        detail::power_law_drifts_dispatch<3, false>(ens.positions, N, *pl, scale, trunc, out, workers);
        return;
      default:
        break;
    }
  }
  // Generic path: any kernel, any dimension.
  const double invN = 1.0 / static_cast<double>(N);
  parallel_for(
      N,
      [&](std::size_t begin, std::size_t end) {
        std::vector<double> buf(N * d), b(d);
        for (std::size_t i = begin; i < end; ++i) {
          for (std::size_t j = 0; j < N; ++j) {
            if (j == i) {
              for (std::size_t c = 0; c < d; ++c) buf[c * N + j] = 0.0;
              continue;
            }
            k.eval(t, ens.particle(i), ens.particle(j), b);
            for (std::size_t c = 0; c < d; ++c) buf[c * N + j] = b[c];
          }
          for (std::size_t c = 0; c < d; ++c)
            out[i * d + c] = pairwise_sum(std::span<const double>(buf).subspan(c * N, N)) * invN;
        }
      },
      workers);
}

/// (1/N) sum_{j != i} b_t(X^i, X^j).
inline std::vector<double> mean_field_drift(double t, std::size_t i, const ParticleEnsemble& ens,
                                            const KernelSpec& k) {
  if (i >= ens.N) throw ValidationError("particle index out of range");
  const std::size_t N = ens.N, d = ens.d;
  if (!all_finite(ens.positions)) throw NumericalAbort("mean_field_drift: non-finite particle position");
  std::vector<double> buf(N * d), b(d), out(d);
  for (std::size_t j = 0; j < N; ++j) {
    if (j == i) {
      for (std::size_t c = 0; c < d; ++c) buf[c * N + j] = 0.0;
      continue;
    }
    k.eval(t, ens.particle(i), ens.particle(j), b);
    for (std::size_t c = 0; c < d; ++c) buf[c * N + j] = b[c];
  }
  for (std::size_t c = 0; c < d; ++c)
    out[c] = pairwise_sum(std::span<const double>(buf).subspan(c * N, N)) / static_cast<double>(N);
  return out;
}

// ---------------------------------------------------------------------------
// Euler-Maruyama

/// Standard normal draws (N x d) for ens's current step.
inline std::vector<double> draw_noise(const ParticleEnsemble& ens) {
  std::vector<double> xi(ens.N * ens.d);
  const NormalStream stream(ens.noise.seed, StreamPurpose::step_noise);
  for (std::size_t i = 0; i < ens.N; ++i)
    stream.fill(i, ens.noise.step, std::span<double>(xi).subspan(i * ens.d, ens.d));
  return xi;
}

/// X <- X + drift * dt + sigma(X) sqrt(dt) xi, with an explicit drift array.
inline ParticleEnsemble advance(const ParticleEnsemble& ens, double dt, std::span<const double> drift,
                                const Diffusion& diff, std::span<const double> xi) {
  if (!(dt > 0.0)) throw ValidationError("time step must be > 0");
  if (xi.size() != ens.N * ens.d) throw ValidationError("noise draw must hold N * d values");
  ParticleEnsemble next = ens;
  const double sq = std::sqrt(dt);
  std::vector<double> sig(ens.d);
  for (std::size_t i = 0; i < ens.N; ++i) {
    diff.diag(ens.particle(i), sig);
    auto x = next.particle(i);
    for (std::size_t k = 0; k < ens.d; ++k) {
      const std::size_t f = i * ens.d + k;
      x[k] += drift[f] * dt + sig[k] * sq * xi[f];
      if (!std::isfinite(x[k]))
        throw NumericalAbort("blow-up: particle " + std::to_string(i) + " non-finite at step " +
                             std::to_string(ens.noise.step));
    }
  }
  next.time = ens.time + dt;
  next.noise.step = ens.noise.step + 1;
  return next;
}

inline ParticleEnsemble em_step(const ParticleEnsemble& ens, double dt, const KernelSpec& k,
                                const Diffusion& diff, std::span<const double> xi,
                                unsigned workers = worker_count()) {
  std::vector<double> drift(ens.N * ens.d);
  mean_field_drifts(ens.time, ens, k, drift, workers);
  return advance(ens, dt, drift, diff, xi);
}

// ---------------------------------------------------------------------------
// Simulation driver

/// Truncation level `level` applies from time `from` until the next stage.
struct TruncationStage {
  double from = 0.0;
  double level = 1.0;
};

enum class NoiseMode { gaussian, frozen_zero };

struct SimConfig {
  std::size_t N = 1000;
  std::size_t d = 2;
  double dt = 1e-2;
  double T = 1.0;
  KernelSpec kernel;
  Diffusion diffusion;
  InitialLaw initial = InitialLaw::point({0.0, 0.0});
  std::uint64_t seed = 0;
  std::vector<double> snapshot_times;
  std::vector<TruncationStage> truncation_schedule;
  NoiseMode noise = NoiseMode::gaussian;
  bool record_path = false;        // keep every step (increment/Krylov statistics)
  bool record_increments = false;  // keep Brownian increments (Girsanov)
  unsigned workers = 0;            // 0: MVLOV_THREADS / hardware

  std::size_t steps() const { return steps_in(T, dt); }
  unsigned worker_count_or_default() const { return workers ? workers : worker_count(); }

  void validate() const {
    if (N < 2) throw ValidationError("N must be >= 2");
    if (d < 1) throw ValidationError("d must be >= 1");
    if (!(dt > 0.0) || !(T > 0.0)) throw ValidationError("dt and T must be > 0");
    if (dt > T * (1 + 1e-12)) throw ValidationError("dt must not exceed T");
    (void)steps();
    for (double s : snapshot_times) {
      if (s < 0.0 || s > T * (1 + 1e-12)) throw ValidationError("snapshot times must lie in [0, T]");
      (void)steps_in(s, dt);
    }
    for (const auto& st : truncation_schedule)
      if (!(st.level > 0.0)) throw ValidationError("truncation schedule levels must be > 0");
    if (const auto* pl = kernel.power_law_form())
      if (pl->direction == Direction::rotational && d != 2)
        throw ValidationError("rotational kernels require d = 2");
    diffusion.validate();
    initial.validate(d);
  }

  /// Kernel in force at time t under the truncation schedule.
  KernelSpec kernel_at(double t) const {
    if (truncation_schedule.empty()) return kernel;
    const TruncationStage* active = nullptr;
    for (const auto& st : truncation_schedule)
      if (st.from <= t + 1e-12 * std::max(1.0, t)) active = &st;
    return active ? kernel.untruncated().truncate(active->level) : kernel;
  }
};

/// Every step of a run, for path statistics.
struct Trajectory {
  std::size_t N = 0, d = 0;
  double dt = 0.0;
  std::uint64_t seed = 0;
  bool zero_drift = false;
  Diffusion diffusion;
  std::vector<std::vector<double>> positions;   // K + 1 slices of N x d
  std::vector<std::vector<double>> increments;  // K slices of Brownian increments

  std::size_t steps() const { return positions.empty() ? 0 : positions.size() - 1; }
  double horizon() const { return dt * static_cast<double>(steps()); }
};

struct SimResult {
  std::vector<ParticleEnsemble> snapshots;
  std::optional<Trajectory> path;
  std::optional<std::string> abort_reason;

  bool ok() const { return !abort_reason.has_value(); }
};

namespace detail {

inline void fill_step_noise(const ParticleEnsemble& ens, NoiseMode mode, std::span<double> xi,
                            unsigned workers) {
  if (mode == NoiseMode::frozen_zero) {
    std::fill(xi.begin(), xi.end(), 0.0);
    return;
  }
  const NormalStream stream(ens.noise.seed, StreamPurpose::step_noise);
  parallel_for(
      ens.N,
      [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) stream.fill(i, ens.noise.step, xi.subspan(i * ens.d, ens.d));
      },
      workers);
}

inline std::vector<std::size_t> snapshot_steps(const SimConfig& cfg) {
  std::vector<std::size_t> s;
  for (double t : cfg.snapshot_times) s.push_back(steps_in(t, cfg.dt));
  return s;
}

// Shared driver: drift_fn(t, ens, out) supplies the drift of each step.
template <typename DriftFn>
SimResult run_em(const SimConfig& cfg, DriftFn&& drift_fn, bool zero_drift) {
  cfg.validate();
  const unsigned workers = cfg.worker_count_or_default();
  const std::size_t K = cfg.steps();
  const auto snaps = snapshot_steps(cfg);
  SimResult res;
  ParticleEnsemble ens(cfg.N, cfg.d, cfg.initial.sample(cfg.N, cfg.d, cfg.seed), 0.0, {cfg.seed, 0});
  if (cfg.record_path || cfg.record_increments) {
    Trajectory tr;
    tr.N = cfg.N;
    tr.d = cfg.d;
    tr.dt = cfg.dt;
    tr.seed = cfg.seed;
    tr.zero_drift = zero_drift;
    tr.diffusion = cfg.diffusion;
    tr.positions.push_back(ens.positions);
    res.path = std::move(tr);
  }
  auto take_snapshots = [&](std::size_t step) {
    for (std::size_t s : snaps)
      if (s == step) res.snapshots.push_back(ens);
  };
  take_snapshots(0);
  std::vector<double> drift(cfg.N * cfg.d), xi(cfg.N * cfg.d);
  try {
    for (std::size_t k = 0; k < K; ++k) {
      drift_fn(ens.time, ens, std::span<double>(drift));
      fill_step_noise(ens, cfg.noise, xi, workers);
      ens = advance(ens, cfg.dt, drift, cfg.diffusion, xi);
      // Time as k * dt avoids accumulated rounding in snapshot stamps.
      ens.time = static_cast<double>(k + 1) * cfg.dt;
      if (res.path) {
        if (cfg.record_path || cfg.record_increments) res.path->positions.push_back(ens.positions);
        if (cfg.record_increments) {
          std::vector<double> inc(xi);
          const double sq = std::sqrt(cfg.dt);
          for (double& v : inc) v *= sq;
          res.path->increments.push_back(std::move(inc));
        }
      }
      take_snapshots(k + 1);
    }
  } catch (const NumericalAbort& e) {
    res.abort_reason = e.what();
  }
  return res;
}

}  // namespace detail

/// Runs the particle system and returns the requested snapshots. A blow-up
/// stops the run; the result then carries the snapshots taken so far.
inline SimResult simulate(const SimConfig& cfg) {
  const unsigned workers = cfg.worker_count_or_default();
  return detail::run_em(
      cfg,
      [&](double t, const ParticleEnsemble& ens, std::span<double> out) {
        mean_field_drifts(t, ens, cfg.kernel_at(t), out, workers);
      },
      cfg.kernel.is_zero());
}

/// Drift that does not depend on the ensemble: dX = B(t, X) dt + sigma dW.
using FieldDrift = std::function<void(double t, std::span<const double> x, std::span<double> out)>;

inline SimResult simulate_frozen(const SimConfig& cfg, const FieldDrift& field) {
  return detail::run_em(
      cfg,
      [&](double t, const ParticleEnsemble& ens, std::span<double> out) {
        for (std::size_t i = 0; i < ens.N; ++i) field(t, ens.particle(i), out.subspan(i * ens.d, ens.d));
      },
      false);
}

// ---------------------------------------------------------------------------
// Statistics

/// (1/N) sum_i |X^i|^beta.
inline double empirical_moment(const ParticleEnsemble& ens, double beta) {
  if (!(beta >= 1.0)) throw ValidationError("moment order beta must be >= 1");
  std::vector<double> v(ens.N);
  for (std::size_t i = 0; i < ens.N; ++i) v[i] = std::pow(norm(ens.particle(i)), beta);
  return pairwise_sum(v) / static_cast<double>(ens.N);
}

/// Monte Carlo estimate of E sup_{t <= T - delta} |X_{t+delta} - X_t|^beta over
/// the stored steps of a trajectory.
inline MeanEstimate increment_statistic(const Trajectory& tr, double delta, double beta) {
  const double T = tr.horizon();
  if (!(delta > 0.0) || delta > T * (1 + 1e-12))
    throw ValidationError("increment lag must lie in (0, T]");
  const std::size_t lag = steps_in(delta, tr.dt);
  const std::size_t K = tr.steps();
  std::vector<double> per_path(tr.N, 0.0);
  for (std::size_t i = 0; i < tr.N; ++i) {
    double best = 0.0;
    for (std::size_t k = 0; k + lag <= K; ++k) {
      double r2 = 0.0;
      for (std::size_t c = 0; c < tr.d; ++c) {
        const double dx = tr.positions[k + lag][i * tr.d + c] - tr.positions[k][i * tr.d + c];
        r2 += dx * dx;
      }
      best = std::max(best, r2);
    }
    per_path[i] = std::pow(std::sqrt(best), beta);
  }
  return mean_and_se(per_path);
}

/// Pathwise distance statistics for two systems sharing noise and initial data.
struct CoupledStats {
  std::vector<double> betas;
  std::vector<MeanEstimate> sup_diff_moment;  // E sup_t |X_t - Y_t|^beta
  double max_sup_diff = 0.0;                  // max over particles of sup_t |X_t - Y_t|
};

inline CoupledStats coupled_simulate(const SimConfig& cfg, const KernelSpec& ka, const KernelSpec& kb,
                                     std::vector<double> betas = {1.0, 2.0}) {
  cfg.validate();
  for (double b : betas)
    if (!(b > 0.0)) throw ValidationError("coupled moments need beta > 0");
  const unsigned workers = cfg.worker_count_or_default();
  const std::size_t K = cfg.steps();
  const auto init = cfg.initial.sample(cfg.N, cfg.d, cfg.seed);
  ParticleEnsemble xa(cfg.N, cfg.d, init, 0.0, {cfg.seed, 0});
  ParticleEnsemble xb = xa;
  std::vector<double> sup(cfg.N, 0.0), da(cfg.N * cfg.d), db(cfg.N * cfg.d), xi(cfg.N * cfg.d);
  for (std::size_t k = 0; k < K; ++k) {
    const double t = xa.time;
    mean_field_drifts(t, xa, ka, da, workers);
    mean_field_drifts(t, xb, kb, db, workers);
    detail::fill_step_noise(xa, cfg.noise, xi, workers);
    xa = advance(xa, cfg.dt, da, cfg.diffusion, xi);
    xb = advance(xb, cfg.dt, db, cfg.diffusion, xi);
    xa.time = xb.time = static_cast<double>(k + 1) * cfg.dt;
    for (std::size_t i = 0; i < cfg.N; ++i) {
      double r2 = 0.0;
      for (std::size_t c = 0; c < cfg.d; ++c) {
        const double dx = xa.positions[i * cfg.d + c] - xb.positions[i * cfg.d + c];
        r2 += dx * dx;
      }
      sup[i] = std::max(sup[i], std::sqrt(r2));
    }
  }
  CoupledStats st;
  st.betas = betas;
  st.max_sup_diff = *std::max_element(sup.begin(), sup.end());
  std::vector<double> v(cfg.N);
  for (double b : betas) {
    for (std::size_t i = 0; i < cfg.N; ++i) v[i] = std::pow(sup[i], b);
    st.sup_diff_moment.push_back(mean_and_se(v));
  }
  return st;
}

// ---------------------------------------------------------------------------
// Girsanov reweighting

struct GirsanovWeight {
  double log_weight = 0.0;
  double integrated_quadratic = 0.0;  // (1/2) int |b~|^2 ds
  double weight() const { return std::exp(log_weight); }
};

struct GirsanovResult {
  std::vector<GirsanovWeight> weights;
  std::vector<double> final_positions;  // N x d, Z_T
  std::size_t d = 0;
  MeanEstimate mean_weight;

  /// E[f(Z_T) E_T] with its standard error.
  MeanEstimate reweighted(const std::function<double(std::span<const double>)>& f) const {
    std::vector<double> v(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i)
      v[i] = f(std::span<const double>(final_positions).subspan(i * d, d)) * weights[i].weight();
    return mean_and_se(v);
  }

  /// sum f w / sum w.
  double self_normalized(const std::function<double(std::span<const double>)>& f) const {
    std::vector<double> num(weights.size()), den(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) {
      den[i] = weights[i].weight();
      num[i] = f(std::span<const double>(final_positions).subspan(i * d, d)) * den[i];
    }
    return pairwise_sum(num) / pairwise_sum(den);
  }
};

/// Stochastic exponentials log E_T = sum_k b~(t_k, Z_k) . dW_k - (1/2)|b~|^2 dt
/// along driftless paths, with b~ = sigma^{-1} B for the supplied drift field.
inline GirsanovResult girsanov_weight(const Trajectory& tr, const FieldDrift& drift) {
  if (tr.increments.empty() || tr.increments.size() != tr.steps())
    throw ValidationError("girsanov_weight: trajectory has no stored Brownian increments");
  if (!tr.zero_drift) throw ValidationError("girsanov_weight: trajectory must come from the driftless dynamics");
  const std::size_t N = tr.N, d = tr.d, K = tr.steps();
  GirsanovResult res;
  res.d = d;
  res.weights.resize(N);
  res.final_positions = tr.positions.back();
  std::vector<double> B(d), sig(d);
  for (std::size_t i = 0; i < N; ++i) {
    double stoch = 0.0, quad = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const auto z = std::span<const double>(tr.positions[k]).subspan(i * d, d);
      drift(static_cast<double>(k) * tr.dt, z, B);
      tr.diffusion.diag(z, sig);
      double bw = 0.0, b2 = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double bt = B[c] / sig[c];
        bw += bt * tr.increments[k][i * d + c];
        b2 += bt * bt;
      }
      stoch += bw;
      quad += 0.5 * b2 * tr.dt;
    }
    res.weights[i] = {stoch - quad, quad};
    if (!std::isfinite(res.weights[i].log_weight))
      throw NumericalAbort("girsanov_weight: non-finite log weight on path " + std::to_string(i));
  }
  std::vector<double> w(N);
  for (std::size_t i = 0; i < N; ++i) w[i] = res.weights[i].weight();
  res.mean_weight = mean_and_se(w);
  return res;
}

}  // namespace mvlov
