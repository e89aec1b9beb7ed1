#pragma once

// Two-point drift kernels b_t(x, y), their clamped truncations, radial
// envelopes h(|x - y|), the integrability check on (p, q), and the fixed
// cutoff bump used by every localized norm in the library.

#include <boost/math/quadrature/gauss.hpp>

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mvlov/common.hpp"

namespace mvlov {

enum class Direction { radial, rotational };

struct ZeroKernel {};

/// kappa * (x - y) / |x - y|^alpha, or its 90-degree rotation in d = 2.
struct PowerLaw {
  double kappa = 1.0;
  double alpha = 1.0;
  Direction direction = Direction::radial;
};

/// Arbitrary bounded kernel supplied as a callable. `bound` must dominate
/// every component; `translation_invariant` enables the convolution fast path.
struct BoundedTable {
  using Fn = std::function<void(double t, std::span<const double> x, std::span<const double> y,
                                std::span<double> out)>;
  Fn fn;
  double bound = 0.0;
  bool translation_invariant = false;
  std::string label = "table";
};

class KernelSpec {
public:
  using Form = std::variant<ZeroKernel, PowerLaw, BoundedTable>;
  using TimeScaling = std::function<double(double)>;

  KernelSpec() = default;
  explicit KernelSpec(Form form, std::optional<double> truncation = std::nullopt,
                      TimeScaling scaling = {})
      : form_(std::move(form)), truncation_(truncation), scaling_(std::move(scaling)) {
    if (const auto* pl = std::get_if<PowerLaw>(&form_)) {
      if (!(pl->kappa >= 0.0) || !std::isfinite(pl->kappa))
        throw ValidationError("power_law kappa must be finite and >= 0");
      if (!(pl->alpha >= 0.0 && pl->alpha < 2.0))
        throw ValidationError("power_law alpha must lie in [0, 2)");
    }
    if (truncation_ && !(*truncation_ > 0.0)) throw ValidationError("truncation level must be > 0");
  }

  static KernelSpec zero() { return KernelSpec(ZeroKernel{}); }

  static KernelSpec power_law(double kappa, double alpha, Direction dir = Direction::radial) {
    return KernelSpec(PowerLaw{kappa, alpha, dir});
  }

  /// b(x, y) = c for every pair (not odd; useful as a linear-drift probe).
  static KernelSpec constant(std::vector<double> c) {
    double bound = 0.0;
    for (double v : c) bound = std::max(bound, std::abs(v));
    BoundedTable tab;
    tab.fn = [c](double, std::span<const double>, std::span<const double>, std::span<double> out) {
      for (std::size_t k = 0; k < out.size(); ++k) out[k] = c[k % c.size()];
    };
    tab.bound = bound;
    tab.translation_invariant = true;
    tab.label = "constant";
    return KernelSpec(std::move(tab));
  }

  const Form& form() const { return form_; }
  const std::optional<double>& truncation() const { return truncation_; }
  bool has_time_scaling() const { return static_cast<bool>(scaling_); }
  double time_scale(double t) const { return scaling_ ? scaling_(t) : 1.0; }

  bool is_zero() const { return std::holds_alternative<ZeroKernel>(form_); }
  const PowerLaw* power_law_form() const { return std::get_if<PowerLaw>(&form_); }

  bool translation_invariant() const {
    if (const auto* tab = std::get_if<BoundedTable>(&form_)) return tab->translation_invariant;
    return true;
  }

  /// Power-law kernels are odd: b(x, y) = -b(y, x).
  bool is_odd() const { return is_zero() || power_law_form() != nullptr; }

  /// Rotational power laws are divergence free in x.
  bool is_divergence_free() const {
    if (is_zero()) return true;
    const auto* pl = power_law_form();
    return pl && pl->direction == Direction::rotational;
  }

  /// Componentwise bound on |b| if one exists (truncation level or table bound).
  std::optional<double> component_bound() const {
    std::optional<double> b;
    if (is_zero()) b = 0.0;
    if (const auto* tab = std::get_if<BoundedTable>(&form_)) b = tab->bound;
    if (const auto* pl = std::get_if<PowerLaw>(&form_); pl && pl->alpha == 1.0 && !scaling_) b = pl->kappa;
    if (truncation_) b = b ? std::min(*b, *truncation_) : *truncation_;
    return b;
  }

  /// Writes b_t(x, y) into out (size d). Zero on the diagonal x == y.
  void eval(double t, std::span<const double> x, std::span<const double> y,
            std::span<double> out) const {
    const std::size_t d = x.size();
    std::fill(out.begin(), out.end(), 0.0);
    if (std::holds_alternative<ZeroKernel>(form_)) return;
    if (const auto* pl = std::get_if<PowerLaw>(&form_)) {
      // b(0) = 0 for the singular form; bounded tables are evaluated as given.
      bool diagonal = true;
      for (std::size_t k = 0; k < d; ++k) diagonal = diagonal && (x[k] == y[k]);
      if (diagonal) return;
      double r2 = 0.0;
      for (std::size_t k = 0; k < d; ++k) r2 += (x[k] - y[k]) * (x[k] - y[k]);
      const double scale = pl->kappa * std::pow(r2, -0.5 * pl->alpha);
      if (pl->direction == Direction::radial) {
        for (std::size_t k = 0; k < d; ++k) out[k] = scale * (x[k] - y[k]);
      } else {
        if (d != 2) throw ValidationError("rotational kernels are defined for d = 2 only");
        out[0] = -scale * (x[1] - y[1]);
        out[1] = scale * (x[0] - y[0]);
      }
    } else {
      std::get<BoundedTable>(form_).fn(t, x, y, out);
    }
    const double s = time_scale(t);
    if (s != 1.0)
      for (double& v : out) v *= s;
    if (truncation_) {
      const double n = *truncation_;
      for (double& v : out) v = std::clamp(v, -n, n);
    }
  }

  std::vector<double> eval(double t, std::span<const double> x, std::span<const double> y) const {
    std::vector<double> out(x.size());
    eval(t, x, y, out);
    return out;
  }

  /// Clamp into [-n, n]; composes as the minimum of levels.
  KernelSpec truncate(double n) const {
    if (!(n > 0.0)) throw ValidationError("truncation level must be > 0, got " + std::to_string(n));
    KernelSpec out = *this;
    out.truncation_ = truncation_ ? std::min(*truncation_, n) : n;
    return out;
  }

  /// Same kernel with the truncation removed.
  KernelSpec untruncated() const {
    KernelSpec out = *this;
    out.truncation_.reset();
    return out;
  }

  /// h(rho) with |b_t(x, y)| <= h(|x - y|), for |time_scale| <= scale_bound.
  double envelope(double rho, std::size_t d, double scale_bound = 1.0) const {
    double h = 0.0;
    if (const auto* pl = std::get_if<PowerLaw>(&form_)) {
      h = rho > 0.0 ? pl->kappa * std::pow(rho, 1.0 - pl->alpha) : kInf;
      if (pl->alpha == 1.0) h = pl->kappa;
    } else if (const auto* tab = std::get_if<BoundedTable>(&form_)) {
      h = tab->bound * std::sqrt(static_cast<double>(d));
    }
    h *= scale_bound;
    if (truncation_) h = std::min(h, *truncation_ * std::sqrt(static_cast<double>(d)));
    return h;
  }

private:
  Form form_ = ZeroKernel{};
  std::optional<double> truncation_;
  TimeScaling scaling_;
};

// ---------------------------------------------------------------------------
// Envelopes and admissibility

struct EnvelopeSpec {
  std::function<double(double)> profile;
  double p = 3.0;
  double q = kInf;
  /// For power-law envelopes h(rho) = kappa * rho^exponent near 0; used for
  /// the integrability test and the analytic inner-ball contribution.
  std::optional<double> singular_exponent;
  double kappa = 1.0;

  static EnvelopeSpec power_law(double kappa, double alpha, double p, double q) {
    EnvelopeSpec e;
    const double a = 1.0 - alpha;
    e.profile = [kappa, a](double rho) { return kappa * std::pow(rho, a); };
    e.p = p;
    e.q = q;
    e.singular_exponent = a;
    e.kappa = kappa;
    return e;
  }

  static EnvelopeSpec constant(double c, double p, double q) {
    EnvelopeSpec e;
    e.profile = [c](double) { return c; };
    e.p = p;
    e.q = q;
    e.singular_exponent = 0.0;
    e.kappa = c;
    return e;
  }
};

struct AdmissibilityReport {
  bool admissible = false;
  double slack = 0.0;
};

/// Admissible iff d/p + 2/q < 1. q = infinity is allowed (2/q = 0).
inline AdmissibilityReport check_admissible(const EnvelopeSpec& env, std::size_t d) {
  if (!(env.p > 2.0) || !(env.q > 2.0))
    throw ValidationError("integrability exponents must satisfy p > 2 and q > 2");
  const double inv_q = is_infinite_exponent(env.q) ? 0.0 : 2.0 / env.q;
  const double inv_p = is_infinite_exponent(env.p) ? 0.0 : static_cast<double>(d) / env.p;
  const double slack = 1.0 - inv_p - inv_q;
  return {slack > 0.0, slack};
}

// ---------------------------------------------------------------------------
// Cutoff profile

/// chi(rho) = 1 on [0, 1], exp(1 - 1 / (1 - (rho - 1)^2)) on (1, 2), 0 beyond.
inline double cutoff(double rho) {
  if (rho <= 1.0) return 1.0;
  if (rho >= 2.0) return 0.0;
  const double s = rho - 1.0;
  return std::exp(1.0 - 1.0 / (1.0 - s * s));
}

/// Surface area of the unit sphere in R^d.
inline double unit_sphere_area(std::size_t d) {
  const double hd = 0.5 * static_cast<double>(d);
  return 2.0 * std::pow(std::numbers::pi, hd) / std::tgamma(hd);
}

/// Radial quadrature layout: geometric panels toward the origin plus uniform
/// panels across the cutoff taper (1, 2].
struct RadialQuadrature {
  int graded_levels = 48;
  int taper_panels = 64;
};

namespace detail {

// integral_0^{2r} g(rho) chi(rho / r)^p rho^{d-1} drho, with g evaluated on
// graded Gauss panels; inner_tail(eps) supplies integral over [0, eps].
template <typename G, typename Tail>
double radial_integral(G&& g, double r, double p, std::size_t d, const RadialQuadrature& quad,
                       Tail&& inner_tail) {
  using boost::math::quadrature::gauss;
  const double dm1 = static_cast<double>(d) - 1.0;
  double total = 0.0;
  // Taper (r, 2r].
  const double width = r / quad.taper_panels;
  for (int k = 0; k < quad.taper_panels; ++k) {
    const double a = r + k * width;
    total += gauss<double, 15>::integrate(
        [&](double rho) {
          const double c = cutoff(rho / r);
          return c == 0.0 ? 0.0 : g(rho) * std::pow(c, p) * std::pow(rho, dm1);
        },
        a, a + width);
  }
  // Core [0, r] with geometric grading toward 0.
  double hi = r;
  for (int k = 0; k < quad.graded_levels; ++k) {
    const double lo = 0.5 * hi;
    total += gauss<double, 15>::integrate([&](double rho) { return g(rho) * std::pow(rho, dm1); },
                                          lo, hi);
    hi = lo;
  }
  return total + inner_tail(hi);
}

}  // namespace detail

/// ||chi_r||_p over R^d (chi_r(x) = chi(x / r)); p = infinity gives 1.
inline double cutoff_lp_norm(std::size_t d, double p, double r = 1.0,
                             const RadialQuadrature& quad = {}) {
  if (is_infinite_exponent(p)) return 1.0;
  const double dd = static_cast<double>(d);
  const double integral = detail::radial_integral(
      [](double) { return 1.0; }, r, p, d, quad, [dd](double eps) { return std::pow(eps, dd) / dd; });
  return std::pow(unit_sphere_area(d) * integral, 1.0 / p);
}

/// sup_z ||h chi^z_r||_p for a radially nonincreasing envelope h; the sup is
/// attained at z = 0. Power-law envelopes with p * (alpha - 1) >= d are
/// rejected as non-integrable.
inline double envelope_localized_norm(const EnvelopeSpec& env, double r, std::size_t d,
                                      const RadialQuadrature& quad = {}) {
  if (!(r > 0.0)) throw ValidationError("cutoff radius must be > 0");
  const double dd = static_cast<double>(d);
  if (is_infinite_exponent(env.p)) {
    if (env.singular_exponent && *env.singular_exponent < 0.0)
      throw ValidationError("non-integrable singularity: envelope is unbounded at 0 and p = inf");
    return env.profile(std::numeric_limits<double>::min());
  }
  const double p = env.p;
  if (env.singular_exponent) {
    const double a = *env.singular_exponent;
    if (a < 0.0 && p * (-a) >= dd)
      throw ValidationError("non-integrable singularity: p * (alpha - 1) = " +
                            std::to_string(p * (-a)) + " >= d = " + std::to_string(d));
  }
  // Check the nonincreasing assumption on a few radii.
  for (double rho = 2.0 * r; rho > 1e-6 * r; rho *= 0.5) {
    if (env.profile(rho * 0.5) + 1e-12 < env.profile(rho))
      throw ValidationError("envelope profile must be radially nonincreasing");
  }
  auto hp = [&](double rho) { return std::pow(std::abs(env.profile(rho)), p); };
  auto tail = [&](double eps) -> double {
    if (!env.singular_exponent) return 0.0;
    const double e = p * (*env.singular_exponent) + dd;
    return std::pow(env.kappa, p) * std::pow(eps, e) / e;
  };
  const double integral = detail::radial_integral(hp, r, p, d, quad, tail);
  return std::pow(unit_sphere_area(d) * integral, 1.0 / p);
}

}  // namespace mvlov
