#pragma once

// Config-driven experiments. A run parses a strict JSON config, dispatches to
// one of the experiment runners, collects artifacts in memory and writes them
// with a manifest.

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mvlov/common.hpp"
#include "mvlov/density.hpp"
#include "mvlov/fpe.hpp"
#include "mvlov/grid.hpp"
#include "mvlov/io.hpp"
#include "mvlov/kernels.hpp"
#include "mvlov/metrics.hpp"
#include "mvlov/particles.hpp"
#include "mvlov/rng.hpp"

namespace mvlov {

inline constexpr const char* kVersion = "0.1.0";

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Strict config reading

namespace detail {

/// Object reader that records which keys were consumed; finish() rejects the rest.
class Section {
public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(path_ + ": expected an object");
  }
  ~Section() = default;
  Section(const Section&) = delete;
  Section& operator=(const Section&) = delete;

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    return convert<T>(key);
  }

  template <typename T>
  T req(const std::string& key) {
    if (!has(key)) throw ValidationError(path_ + ": missing required key '" + key + "'");
    return convert<T>(key);
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string where(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ValidationError("unknown key '" + key + "' in " + path_);
  }

private:
  template <typename T>
  T convert(const std::string& key) const {
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ValidationError(path_ + "." + key + ": wrong type");
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Scalar or per-axis list.
inline std::vector<double> axis_values(const json& v, std::size_t d, const std::string& where) {
  if (v.is_number()) return std::vector<double>(d, v.get<double>());
  if (v.is_array() && v.size() == d) {
    std::vector<double> out;
    for (const auto& x : v) {
      if (!x.is_number()) throw ValidationError(where + ": expected numbers");
      out.push_back(x.get<double>());
    }
    return out;
  }
  throw ValidationError(where + ": expected a number or " + std::to_string(d) + " numbers");
}

}  // namespace detail

struct KernelSection {
  KernelSpec spec = KernelSpec::zero();
  std::vector<TruncationStage> schedule;
};

struct ParticlesSection {
  std::size_t N = 1000;
  std::size_t d = 1;
  double dt = 1e-2;
  double T = 1.0;
  std::vector<double> snapshot_times;
  bool record_path = false;
};

struct FpeSection {
  double dt = 0.0;
  Boundary boundary = Boundary::no_flux;
};

struct SuperposeSection {
  std::size_t replicas = 1;
  std::optional<double> bandwidth;
};

struct ChaosSection {
  std::vector<std::size_t> N_values{1000, 4000, 16000};
  std::size_t replicas = 100;
  std::string reference = "fpe";  // or "largest_n"
  std::size_t bootstrap = 200;
};

struct TruncationSweepSection {
  std::vector<double> levels{1, 2, 4, 8, 16};
  std::vector<double> betas{1, 2};
};

struct ZvonkinSection {
  std::vector<double> lambdas{4, 16, 64, 256};
  double T = 1.0;
  double dt = 0.0;
  Boundary boundary = Boundary::periodic;
  double smallness = 0.5;
  double lambda_limit = 1e6;
};

struct GirsanovSection {
  double flow_dt = 0.01;
};

struct FitSection {
  std::vector<double> gamma_search{1, 1.25, 1.5, 2, 2.5, 3, 4, 6, 8};
  double threshold = 1e-12;
  double c_max = 10.0;
  std::string density_source = "particles";  // particles | fpe | exact_heat
  bool refine_check = false;
  double bandwidth_floor_cells = 2.0;
};

struct KrylovSection {
  std::vector<double> dts{1e-2, 1e-3};
  NormSpec norm;
  std::vector<double> bump_centers{-1.0, -0.5, 0.0, 0.5, 1.0};
  std::vector<double> bump_widths{0.2, 0.5};
};

struct PairKrylovSection {
  std::vector<double> dts{1e-2, 1e-3};
  double p1 = 2.0, p2 = 2.0, q0 = 4.0;
  double kappa = 1.0, alpha = 1.5, truncation = 10.0;
};

struct MomentsSection {
  double beta = 4.0;
  std::vector<double> deltas{0.01, 0.04, 0.16};
};

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"simulate",  "fpe",           "superpose",     "chaos",
                                              "truncation_sweep", "zvonkin_sweep", "girsanov_check",
                                              "bounds_fit", "gradient_fit",  "krylov_check",  "pair_krylov",
                                              "moments"};
  return names;
}

struct ExperimentConfig {
  std::string experiment;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  unsigned workers = 0;
  ParticlesSection particles;
  KernelSection kernel;
  Diffusion diffusion;
  InitialLaw initial = InitialLaw::point({0.0});
  std::optional<Grid> grid;
  FpeSection fpe;
  SuperposeSection superpose;
  ChaosSection chaos;
  TruncationSweepSection truncation_sweep;
  ZvonkinSection zvonkin;
  GirsanovSection girsanov;
  FitSection fit;
  KrylovSection krylov;
  PairKrylovSection pair_krylov;
  MomentsSection moments;
  json raw;
  std::string config_hash;

  const Grid& require_grid() const {
    if (!grid) throw ValidationError("experiment '" + experiment + "' needs a 'grid' section");
    return *grid;
  }

  SimConfig sim() const {
    SimConfig s;
    s.N = particles.N;
    s.d = particles.d;
    s.dt = particles.dt;
    s.T = particles.T;
    s.kernel = kernel.spec;
    s.truncation_schedule = kernel.schedule;
    s.diffusion = diffusion;
    s.initial = initial;
    s.seed = seed;
    s.snapshot_times = particles.snapshot_times.empty() ? std::vector<double>{particles.T} : particles.snapshot_times;
    s.record_path = particles.record_path;
    s.workers = workers;
    return s;
  }
};

namespace detail {

inline Boundary parse_boundary(const std::string& s, const std::string& where) {
  if (s == "no_flux") return Boundary::no_flux;
  if (s == "periodic") return Boundary::periodic;
  throw ValidationError(where + ": boundary must be 'no_flux' or 'periodic'");
}

inline KernelSection parse_kernel(const json& j) {
  Section s(j, "kernel");
  KernelSection out;
  const auto form = s.get<std::string>("form", "zero");
  if (form == "zero") {
    out.spec = KernelSpec::zero();
  } else if (form == "power_law") {
    const auto dir = s.get<std::string>("direction", "radial");
    if (dir != "radial" && dir != "rotational")
      throw ValidationError("kernel.direction must be 'radial' or 'rotational'");
    out.spec = KernelSpec::power_law(s.req<double>("kappa"), s.req<double>("alpha"),
                                     dir == "radial" ? Direction::radial : Direction::rotational);
  } else if (form == "constant") {
    out.spec = KernelSpec::constant(s.req<std::vector<double>>("value"));
  } else {
    throw ValidationError("kernel.form must be 'zero', 'power_law' or 'constant'");
  }
  if (s.has("truncation")) out.spec = out.spec.truncate(s.req<double>("truncation"));
  if (s.has("schedule")) {
    const auto& arr = s.raw("schedule");
    if (!arr.is_array()) throw ValidationError("kernel.schedule: expected a list");
    for (std::size_t k = 0; k < arr.size(); ++k) {
      Section st(arr[k], "kernel.schedule[" + std::to_string(k) + "]");
      out.schedule.push_back({st.req<double>("from"), st.req<double>("level")});
      st.finish();
    }
  }
  s.finish();
  return out;
}

inline Diffusion parse_diffusion(const json& j) {
  Section s(j, "diffusion");
  const auto type = s.get<std::string>("type", "sqrt2");
  Diffusion out;
  if (type == "sqrt2") {
    out = Diffusion::constant_sqrt2();
  } else if (type == "diagonal") {
    out = Diffusion::diagonal_state(s.get<double>("c0", Diffusion{}.c0));
  } else {
    throw ValidationError("diffusion.type must be 'sqrt2' or 'diagonal'");
  }
  s.finish();
  out.validate();
  return out;
}

inline InitialLaw parse_initial(const json& j, std::size_t d) {
  Section s(j, "initial");
  const auto type = s.get<std::string>("type", "point");
  InitialLaw out;
  if (type == "point") {
    out = InitialLaw::point(s.has("mean") ? axis_values(s.raw("mean"), d, "initial.mean") : std::vector<double>(d, 0.0));
  } else if (type == "gaussian") {
    const auto mean = s.has("mean") ? axis_values(s.raw("mean"), d, "initial.mean") : std::vector<double>(d, 0.0);
    if (s.has("cov")) {
      out = InitialLaw::gaussian(mean, s.req<std::vector<double>>("cov"));
    } else {
      out = InitialLaw::isotropic(mean, s.req<double>("var"));
    }
  } else if (type == "uniform_box") {
    out = InitialLaw::uniform_box(axis_values(s.raw("lo"), d, "initial.lo"), axis_values(s.raw("hi"), d, "initial.hi"));
  } else {
    throw ValidationError("initial.type must be 'point', 'gaussian' or 'uniform_box'");
  }
  s.finish();
  out.validate(d);
  return out;
}

inline Grid parse_grid(const json& j, std::size_t d) {
  Section s(j, "grid");
  const auto lo = axis_values(s.raw("lo"), d, "grid.lo");
  const auto hi = axis_values(s.raw("hi"), d, "grid.hi");
  const auto cells_d = axis_values(s.raw("cells"), d, "grid.cells");
  std::vector<std::size_t> cells;
  for (double c : cells_d) {
    if (!(c >= 1.0) || c != std::floor(c)) throw ValidationError("grid.cells must be positive integers");
    cells.push_back(static_cast<std::size_t>(c));
  }
  s.finish();
  return Grid(lo, hi, cells);
}

template <typename T>
void check_positive(const std::vector<T>& v, const std::string& where) {
  if (v.empty()) throw ValidationError(where + " must not be empty");
  for (const auto& x : v)
    if (!(x > T{0})) throw ValidationError(where + " entries must be > 0");
}

// Hash input: the config without fields that only affect where and how fast
// results are produced.
inline std::string config_digest(json j) {
  j.erase("output_dir");
  j.erase("workers");
  return io::sha256_hex(j.dump());
}

}  // namespace detail

/// Parses and validates a config document. Unknown keys anywhere are errors.
inline ExperimentConfig parse_config(const json& j) {
  detail::Section top(j, "config");
  ExperimentConfig c;
  c.raw = j;
  c.experiment = top.req<std::string>("experiment");
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), c.experiment) == names.end())
    throw ValidationError("unknown experiment '" + c.experiment + "'");
  c.seed = top.get<std::uint64_t>("seed", 0);
  c.output_dir = top.get<std::string>("output_dir", "out");
  c.workers = top.get<unsigned>("workers", 0);

  if (top.has("particles")) {
    detail::Section s(top.raw("particles"), "particles");
    auto& p = c.particles;
    p.N = s.get<std::size_t>("N", p.N);
    p.d = s.get<std::size_t>("d", p.d);
    p.dt = s.get<double>("dt", p.dt);
    p.T = s.get<double>("T", p.T);
    p.snapshot_times = s.get<std::vector<double>>("snapshot_times", {});
    p.record_path = s.get<bool>("record_path", false);
    s.finish();
  }
  const std::size_t d = c.particles.d;
  if (d < 1 || d > 3) throw ValidationError("particles.d must be 1, 2 or 3");
  if (top.has("kernel")) c.kernel = detail::parse_kernel(top.raw("kernel"));
  if (top.has("diffusion")) c.diffusion = detail::parse_diffusion(top.raw("diffusion"));
  c.initial = top.has("initial") ? detail::parse_initial(top.raw("initial"), d) : InitialLaw::point(std::vector<double>(d, 0.0));
  if (top.has("grid")) c.grid = detail::parse_grid(top.raw("grid"), d);
  if (top.has("fpe")) {
    detail::Section s(top.raw("fpe"), "fpe");
    c.fpe.dt = s.get<double>("dt", 0.0);
    c.fpe.boundary = detail::parse_boundary(s.get<std::string>("boundary", "no_flux"), "fpe.boundary");
    s.finish();
  }
  if (top.has("superpose")) {
    detail::Section s(top.raw("superpose"), "superpose");
    c.superpose.replicas = s.get<std::size_t>("replicas", 1);
    if (s.has("bandwidth")) c.superpose.bandwidth = s.req<double>("bandwidth");
    s.finish();
  }
  if (top.has("chaos")) {
    detail::Section s(top.raw("chaos"), "chaos");
    auto& ch = c.chaos;
    ch.N_values = s.get<std::vector<std::size_t>>("N_values", ch.N_values);
    ch.replicas = s.get<std::size_t>("replicas", ch.replicas);
    ch.reference = s.get<std::string>("reference", ch.reference);
    ch.bootstrap = s.get<std::size_t>("bootstrap", ch.bootstrap);
    s.finish();
    if (ch.reference != "fpe" && ch.reference != "largest_n")
      throw ValidationError("chaos.reference must be 'fpe' or 'largest_n'");
  }
  if (top.has("truncation_sweep")) {
    detail::Section s(top.raw("truncation_sweep"), "truncation_sweep");
    c.truncation_sweep.levels = s.get<std::vector<double>>("levels", c.truncation_sweep.levels);
    c.truncation_sweep.betas = s.get<std::vector<double>>("betas", c.truncation_sweep.betas);
    s.finish();
  }
  if (top.has("zvonkin")) {
    detail::Section s(top.raw("zvonkin"), "zvonkin");
    auto& z = c.zvonkin;
    z.lambdas = s.get<std::vector<double>>("lambdas", z.lambdas);
    z.T = s.get<double>("T", z.T);
    z.dt = s.get<double>("dt", z.dt);
    z.boundary = detail::parse_boundary(s.get<std::string>("boundary", "periodic"), "zvonkin.boundary");
    z.smallness = s.get<double>("smallness", z.smallness);
    z.lambda_limit = s.get<double>("lambda_limit", z.lambda_limit);
    s.finish();
  }
  if (top.has("girsanov")) {
    detail::Section s(top.raw("girsanov"), "girsanov");
    c.girsanov.flow_dt = s.get<double>("flow_dt", c.girsanov.flow_dt);
    s.finish();
  }
  if (top.has("fit")) {
    detail::Section s(top.raw("fit"), "fit");
    auto& f = c.fit;
    f.gamma_search = s.get<std::vector<double>>("gamma_search", f.gamma_search);
    f.threshold = s.get<double>("threshold", f.threshold);
    f.c_max = s.get<double>("c_max", f.c_max);
    f.density_source = s.get<std::string>("density_source", f.density_source);
    f.refine_check = s.get<bool>("refine_check", f.refine_check);
    f.bandwidth_floor_cells = s.get<double>("bandwidth_floor_cells", f.bandwidth_floor_cells);
    s.finish();
    if (f.density_source != "particles" && f.density_source != "fpe" && f.density_source != "exact_heat")
      throw ValidationError("fit.density_source must be 'particles', 'fpe' or 'exact_heat'");
  }
  if (top.has("krylov")) {
    detail::Section s(top.raw("krylov"), "krylov");
    auto& k = c.krylov;
    k.dts = s.get<std::vector<double>>("dts", k.dts);
    k.norm.p = s.get<double>("p", k.norm.p);
    k.norm.q = s.has("q") && s.raw("q").is_string() ? (s.raw("q") == "inf" ? kInf : throw ValidationError("krylov.q: use a number or \"inf\""))
                                                   : s.get<double>("q", k.norm.q);
    k.norm.r = s.get<double>("r", k.norm.r);
    const auto lattice = s.get<std::string>("lattice", "continuum_sup");
    if (lattice != "continuum_sup" && lattice != "unit_lattice")
      throw ValidationError("krylov.lattice must be 'continuum_sup' or 'unit_lattice'");
    k.norm.lattice = lattice == "unit_lattice" ? LatticeMode::unit_lattice : LatticeMode::continuum_sup;
    k.bump_centers = s.get<std::vector<double>>("bump_centers", k.bump_centers);
    k.bump_widths = s.get<std::vector<double>>("bump_widths", k.bump_widths);
    s.finish();
    k.norm.validate();
  }
  if (top.has("pair_krylov")) {
    detail::Section s(top.raw("pair_krylov"), "pair_krylov");
    auto& k = c.pair_krylov;
    k.dts = s.get<std::vector<double>>("dts", k.dts);
    k.p1 = s.get<double>("p1", k.p1);
    k.p2 = s.get<double>("p2", k.p2);
    k.q0 = s.get<double>("q0", k.q0);
    k.kappa = s.get<double>("kappa", k.kappa);
    k.alpha = s.get<double>("alpha", k.alpha);
    k.truncation = s.get<double>("truncation", k.truncation);
    s.finish();
  }
  if (top.has("moments")) {
    detail::Section s(top.raw("moments"), "moments");
    c.moments.beta = s.get<double>("beta", c.moments.beta);
    c.moments.deltas = s.get<std::vector<double>>("deltas", c.moments.deltas);
    s.finish();
  }
  top.finish();

  c.sim().validate();
  if (c.experiment == "chaos") {
    if (c.chaos.replicas < 100)
      throw ValidationError("chaos.replicas must be >= 100 (got " + std::to_string(c.chaos.replicas) +
                            "): too few marginal samples");
    detail::check_positive(c.chaos.N_values, "chaos.N_values");
    if (!std::is_sorted(c.chaos.N_values.begin(), c.chaos.N_values.end()) ||
        std::adjacent_find(c.chaos.N_values.begin(), c.chaos.N_values.end()) != c.chaos.N_values.end())
      throw ValidationError("chaos.N_values must be strictly increasing");
  }
  if (c.experiment == "zvonkin_sweep") {
    detail::check_positive(c.zvonkin.lambdas, "zvonkin.lambdas");
    for (double l : c.zvonkin.lambdas)
      if (l < 1.0) throw ValidationError("zvonkin.lambdas must be >= 1");
  }
  if (c.experiment == "truncation_sweep") detail::check_positive(c.truncation_sweep.levels, "truncation_sweep.levels");
  if (c.experiment == "krylov_check" || c.experiment == "pair_krylov") {
    detail::check_positive(c.experiment == "krylov_check" ? c.krylov.dts : c.pair_krylov.dts, "dts");
  }
  c.config_hash = detail::config_digest(j);
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  const std::string text = io::read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Artifacts

struct Artifact {
  std::string name;
  std::string bytes;
};

/// In-memory artifact collector; the single writer of a run.
class ArtifactSink {
public:
  explicit ArtifactSink(std::string config_hash) : hash_(std::move(config_hash)) {}

  const std::string& config_hash() const { return hash_; }

  void add(std::string name, std::string bytes) { items_.push_back({std::move(name), std::move(bytes)}); }

  /// CSV with a leading comment line carrying the config hash.
  void csv(std::string name, const io::CsvTable& t) { add(std::move(name), "# config_hash=" + hash_ + "\n" + t.str()); }

  /// JSON-lines records, each tagged with the config hash.
  void jsonl(std::string name, const std::vector<json>& records) {
    std::string out;
    for (json r : records) {
      r["config_hash"] = hash_;
      out += r.dump() + "\n";
    }
    add(std::move(name), std::move(out));
  }

  const std::vector<Artifact>& items() const { return items_; }
  const Artifact* find(const std::string& name) const {
    for (const auto& a : items_)
      if (a.name == name) return &a;
    return nullptr;
  }

private:
  std::string hash_;
  std::vector<Artifact> items_;
};

/// Thrown by runners when a numerical abort leaves partial artifacts.
struct PartialRun : NumericalAbort {
  explicit PartialRun(const std::string& what) : NumericalAbort(what) {}
};

// ---------------------------------------------------------------------------
// Shared helpers

namespace detail {

inline std::string fmtd(double v) { return io::fmt(v); }

inline std::vector<double> axis_samples(const ParticleEnsemble& ens, std::size_t axis) { return ens.axis(axis); }

/// Marginal density along one axis.
inline GridDensity marginal(const GridDensity& rho, std::size_t axis) {
  const Grid& g = rho.grid;
  if (g.dim() == 1) return rho;
  Grid g1({g.lo()[axis]}, {g.hi()[axis]}, {g.cells()[axis]});
  GridDensity out(g1);
  std::vector<std::size_t> idx(g.dim());
  const double other = g.cell_volume() / g.spacing(axis);
  for (std::size_t c = 0; c < g.size(); ++c) {
    g.unflatten(c, idx);
    out.values[idx[axis]] += rho.values[c] * other;
  }
  return out;
}

/// Initial law as a grid density (point laws are not densities).
inline GridDensity initial_density(const InitialLaw& law, const Grid& g) {
  const std::size_t d = g.dim();
  GridDensity out(g);
  std::vector<double> x(d);
  switch (law.kind) {
    case InitialKind::point:
      throw ValidationError("this experiment needs an initial density: use a gaussian or uniform_box initial law");
    case InitialKind::gaussian: {
      const auto L = law.cholesky(d);
      double logdet = 0.0;
      for (std::size_t k = 0; k < d; ++k) logdet += 2.0 * std::log(L[k * d + k]);
      std::vector<double> z(d);
      for (std::size_t c = 0; c < g.size(); ++c) {
        g.center_of(c, x);
        // solve L z = x - mean
        for (std::size_t a = 0; a < d; ++a) {
          double s = x[a] - law.mean[a];
          for (std::size_t b = 0; b < a; ++b) s -= L[a * d + b] * z[b];
          z[a] = s / L[a * d + a];
        }
        out.values[c] = std::exp(-0.5 * norm2(z) - 0.5 * logdet -
                                 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi));
      }
      break;
    }
    case InitialKind::uniform_box: {
      double vol = 1.0;
      for (std::size_t a = 0; a < d; ++a) vol *= law.hi[a] - law.lo[a];
      for (std::size_t c = 0; c < g.size(); ++c) {
        g.center_of(c, x);
        bool in = true;
        for (std::size_t a = 0; a < d; ++a) in = in && x[a] >= law.lo[a] && x[a] <= law.hi[a];
        out.values[c] = in ? 1.0 / vol : 0.0;
      }
      break;
    }
  }
  const double m = out.mass();
  if (!(m > 0.0)) throw ValidationError("initial density has no mass on the grid");
  for (double& v : out.values) v /= m;
  return out;
}

inline Measure initial_measure(const InitialLaw& law, const Grid& g) {
  if (law.kind == InitialKind::point) return AtomMeasure::dirac(law.x0);
  return initial_density(law, g);
}

inline FpeResult run_fpe(const ExperimentConfig& c, const Grid& g, std::vector<double> times) {
  FpeConfig f;
  f.grid = g;
  f.dt = c.fpe.dt;
  f.T = c.particles.T;
  f.kernel = c.kernel.spec;
  f.boundary = c.fpe.boundary;
  f.initial = initial_density(c.initial, g);
  f.snapshot_times = std::move(times);
  return fpe_solve(f);
}

inline std::vector<double> snapshot_times(const ExperimentConfig& c) {
  return c.particles.snapshot_times.empty() ? std::vector<double>{c.particles.T} : c.particles.snapshot_times;
}

inline SimResult checked_simulate(const SimConfig& s) {
  auto r = simulate(s);
  if (!r.ok()) throw PartialRun(*r.abort_reason);
  return r;
}

inline std::string snapshot_name(std::size_t k, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03zu", k);
  return std::string("snapshot_") + buf + ext;
}

// Bootstrap standard error of a statistic over resampled data.
template <typename Stat>
double bootstrap_se(const std::vector<double>& data, std::size_t B, std::uint64_t seed, Stat&& stat) {
  if (B < 2) return 0.0;
  const NormalStream u(seed, StreamPurpose::bootstrap);
  std::vector<double> vals(B), sample(data.size());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto j = std::min(data.size() - 1, static_cast<std::size_t>(u.uniform(b, i) * static_cast<double>(data.size())));
      sample[i] = data[j];
    }
    vals[b] = stat(sample);
  }
  const auto est = mean_and_se(vals);
  return est.std_error * std::sqrt(static_cast<double>(B));  // std deviation of the bootstrap replicates
}

inline json fit_json(const BoundFit& f) {
  return {{"c", f.c},
          {"gamma", f.gamma},
          {"residual", f.residual},
          {"excluded_cells", f.excluded_cells},
          {"checked_cells", f.checked_cells},
          {"threshold", f.threshold},
          {"per_time", f.per_time}};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Runners. Each returns a JSON summary and fills the sink.

inline json run_simulate(const ExperimentConfig& c, ArtifactSink& sink) {
  const SimConfig s = c.sim();
  const auto r = simulate(s);
  for (std::size_t k = 0; k < r.snapshots.size(); ++k)
    sink.add(detail::snapshot_name(k, ".mvl1"), io::encode_mvl1(r.snapshots[k]));
  sink.add("particles.csv", "# config_hash=" + sink.config_hash() + "\n" + io::particles_csv(r.snapshots));
  json summary{{"snapshots", r.snapshots.size()}};
  std::vector<double> m2;
  for (const auto& e : r.snapshots) m2.push_back(empirical_moment(e, 2.0));
  summary["second_moment"] = m2;
  if (!r.ok()) throw PartialRun(*r.abort_reason);
  return summary;
}

inline json run_fpe_experiment(const ExperimentConfig& c, ArtifactSink& sink) {
  const Grid& g = c.require_grid();
  const auto res = detail::run_fpe(c, g, detail::snapshot_times(c));
  io::CsvTable t({"t", "mass", "min_value"});
  for (std::size_t k = 0; k < res.snapshots.size(); ++k) {
    const auto& [time, rho] = res.snapshots[k];
    sink.add(detail::snapshot_name(k, ".mvg1"), io::encode_mvg1(rho));
    const double mn = *std::min_element(rho.values.begin(), rho.values.end());
    t.row({detail::fmtd(time), detail::fmtd(rho.mass()), detail::fmtd(mn)});
  }
  sink.csv("fpe.csv", t);
  return {{"steps", res.steps}, {"dt", res.dt}, {"max_mass_drift", res.max_mass_drift}, {"min_value", res.min_value}};
}

/// W_1 between particle KDE marginals (first axis) and the FPE solution per snapshot.
inline json run_superpose(const ExperimentConfig& c, ArtifactSink& sink) {
  const Grid& g = c.require_grid();
  const auto times = detail::snapshot_times(c);
  const auto fpe = detail::run_fpe(c, g, times);
  const std::size_t R = std::max<std::size_t>(1, c.superpose.replicas);
  std::vector<std::vector<double>> w1(times.size());
  std::vector<double> kde_mass(times.size(), 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    SimConfig s = c.sim();
    s.snapshot_times = times;
    s.seed = r == 0 ? c.seed : derive_seed(c.seed, r);
    const auto res = detail::checked_simulate(s);
    for (std::size_t k = 0; k < times.size(); ++k) {
      std::optional<std::vector<double>> bw;
      if (c.superpose.bandwidth) bw = std::vector<double>(c.particles.d, *c.superpose.bandwidth);
      const GridDensity est = kde(res.snapshots[k], bw, g);
      if (r == 0) kde_mass[k] = est.mass();
      w1[k].push_back(wasserstein_1d(detail::marginal(est, 0), detail::marginal(fpe.snapshots[k].second, 0)));
    }
  }
  io::CsvTable t({"t", "w1", "w1_se", "replicas", "kde_mass", "fpe_mass"});
  json rows = json::array();
  double worst = 0.0;
  for (std::size_t k = 0; k < times.size(); ++k) {
    const auto est = mean_and_se(w1[k]);
    worst = std::max(worst, est.mean);
    t.row({detail::fmtd(times[k]), detail::fmtd(est.mean), detail::fmtd(est.std_error), std::to_string(R),
           detail::fmtd(kde_mass[k]), detail::fmtd(fpe.snapshots[k].second.mass())});
    rows.push_back({{"t", times[k]}, {"w1", est.mean}, {"w1_se", est.std_error}, {"kde_mass", kde_mass[k]}});
  }
  sink.csv("superpose.csv", t);
  return {{"rows", rows}, {"max_w1", worst}, {"fpe_max_mass_drift", fpe.max_mass_drift}};
}

struct ChaosReport {
  std::vector<std::size_t> N_values;
  std::vector<double> distances;
  std::vector<double> std_errors;
  std::size_t replicas = 0;
  std::string reference;
};

/// Particle 1 of R independent N-particle systems gives R samples of its
/// time-T marginal (first axis); each N is compared against the reference flow.
inline ChaosReport chaos_experiment(const ExperimentConfig& c) {
  const auto& ch = c.chaos;
  if (ch.replicas < 100) throw ValidationError("chaos_experiment: at least 100 replicas are needed");
  ChaosReport rep;
  rep.N_values = ch.N_values;
  rep.replicas = ch.replicas;
  rep.reference = ch.reference;
  std::vector<std::vector<double>> samples;
  for (std::size_t n = 0; n < ch.N_values.size(); ++n) {
    std::vector<double> xs(ch.replicas);
    for (std::size_t r = 0; r < ch.replicas; ++r) {
      SimConfig s = c.sim();
      s.N = ch.N_values[n];
      s.snapshot_times = {s.T};
      s.record_path = false;
      s.seed = derive_seed(derive_seed(c.seed, ch.N_values[n]), r);
      const auto res = detail::checked_simulate(s);
      xs[r] = res.snapshots.back().positions[0];
    }
    samples.push_back(std::move(xs));
  }
  if (ch.reference == "fpe") {
    const auto fpe = detail::run_fpe(c, c.require_grid(), {c.particles.T});
    const GridDensity ref = detail::marginal(fpe.snapshots.back().second, 0);
    for (std::size_t n = 0; n < samples.size(); ++n) {
      rep.distances.push_back(wasserstein_1d(samples[n], ref));
      rep.std_errors.push_back(detail::bootstrap_se(samples[n], ch.bootstrap, derive_seed(c.seed, n),
                                                    [&](const std::vector<double>& v) { return wasserstein_1d(v, ref); }));
    }
  } else {
    const auto& ref = samples.back();
    for (std::size_t n = 0; n + 1 < samples.size(); ++n) {
      rep.distances.push_back(wasserstein_1d(samples[n], ref));
      rep.std_errors.push_back(detail::bootstrap_se(samples[n], ch.bootstrap, derive_seed(c.seed, n),
                                                    [&](const std::vector<double>& v) { return wasserstein_1d(v, ref); }));
    }
    rep.N_values.pop_back();
  }
  for (double v : rep.distances)
    if (!std::isfinite(v)) throw NumericalAbort("chaos_experiment: non-finite distance");
  return rep;
}

inline json run_chaos(const ExperimentConfig& c, ArtifactSink& sink) {
  const auto rep = chaos_experiment(c);
  io::CsvTable t({"N", "w1", "w1_se", "replicas"});
  for (std::size_t k = 0; k < rep.distances.size(); ++k)
    t.row({std::to_string(rep.N_values[k]), detail::fmtd(rep.distances[k]), detail::fmtd(rep.std_errors[k]),
           std::to_string(rep.replicas)});
  sink.csv("chaos.csv", t);
  bool decreasing = true;
  for (std::size_t k = 1; k < rep.distances.size(); ++k)
    decreasing = decreasing && rep.distances[k] <= rep.distances[k - 1] + 2.0 * std::hypot(rep.std_errors[k], rep.std_errors[k - 1]);
  return {{"N_values", rep.N_values},
          {"distances", rep.distances},
          {"std_errors", rep.std_errors},
          {"reference", rep.reference},
          {"weakly_decreasing", decreasing}};
}

/// Pathwise distance between the system at each truncation level and at the
/// largest level, sharing noise and initial data.
inline json run_truncation_sweep(const ExperimentConfig& c, ArtifactSink& sink) {
  auto levels = c.truncation_sweep.levels;
  std::sort(levels.begin(), levels.end());
  const KernelSpec base = c.kernel.spec.untruncated();
  const KernelSpec ref = base.truncate(levels.back());
  io::CsvTable t({"level", "beta", "sup_diff_moment", "se", "max_sup_diff"});
  json rows = json::array();
  for (double n : levels) {
    SimConfig s = c.sim();
    s.truncation_schedule.clear();
    const auto st = coupled_simulate(s, base.truncate(n), ref, c.truncation_sweep.betas);
    for (std::size_t b = 0; b < st.betas.size(); ++b) {
      t.row({detail::fmtd(n), detail::fmtd(st.betas[b]), detail::fmtd(st.sup_diff_moment[b].mean),
             detail::fmtd(st.sup_diff_moment[b].std_error), detail::fmtd(st.max_sup_diff)});
      rows.push_back({{"level", n}, {"beta", st.betas[b]}, {"moment", st.sup_diff_moment[b].mean}});
    }
  }
  sink.csv("truncation_sweep.csv", t);
  return {{"rows", rows}, {"reference_level", levels.back()}};
}

/// The frozen drift b(x) = b_0(x, 0) on the grid.
inline VectorField point_source_drift(const KernelSpec& k, const Grid& g) {
  VectorField f(g);
  const std::size_t d = g.dim();
  std::vector<double> x(d), zero(d, 0.0), b(d);
  for (std::size_t c = 0; c < g.size(); ++c) {
    g.center_of(c, x);
    k.eval(0.0, x, zero, b);
    for (std::size_t a = 0; a < d; ++a) f.values[c * d + a] = b[a];
  }
  return f;
}

inline json run_zvonkin_sweep(const ExperimentConfig& c, ArtifactSink& sink) {
  const Grid& g = c.require_grid();
  const auto& z = c.zvonkin;
  const VectorField b = point_source_drift(c.kernel.spec, g);
  ZvonkinOptions opt;
  opt.dt = z.dt;
  opt.boundary = z.boundary;
  io::CsvTable t({"lambda", "sup_u", "sup_grad_u"});
  std::vector<double> lam = z.lambdas, su, sg;
  std::sort(lam.begin(), lam.end());
  std::optional<double> small;
  for (double l : lam) {
    const auto sol = zvonkin_solve(b, l, z.T, opt);
    su.push_back(sol.sup_u);
    sg.push_back(sol.sup_grad_u);
    t.row({detail::fmtd(l), detail::fmtd(sol.sup_u), detail::fmtd(sol.sup_grad_u)});
    if (!small && sol.sup_u + sol.sup_grad_u <= z.smallness) small = l;
  }
  // Extend the ladder until the smallness condition holds.
  std::vector<json> extension;
  for (double l = lam.back() * 4.0; !small && l <= z.lambda_limit; l *= 4.0) {
    const auto sol = zvonkin_solve(b, l, z.T, opt);
    extension.push_back({{"lambda", l}, {"sup_u", sol.sup_u}, {"sup_grad_u", sol.sup_grad_u}});
    t.row({detail::fmtd(l), detail::fmtd(sol.sup_u), detail::fmtd(sol.sup_grad_u)});
    if (sol.sup_u + sol.sup_grad_u <= z.smallness) small = l;
  }
  sink.csv("zvonkin.csv", t);
  std::vector<double> ll, lg;
  for (std::size_t k = 0; k < lam.size(); ++k) {
    ll.push_back(std::log(lam[k]));
    lg.push_back(std::log(sg[k]));
  }
  bool decreasing = true, total_nonincreasing = true;
  for (std::size_t k = 1; k < lam.size(); ++k) {
    decreasing = decreasing && sg[k] < sg[k - 1];
    total_nonincreasing = total_nonincreasing && su[k] + sg[k] <= su[k - 1] + sg[k - 1];
  }
  json out{{"lambdas", lam},
           {"sup_u", su},
           {"sup_grad_u", sg},
           {"slope", lam.size() >= 2 ? fit_slope(ll, lg) : 0.0},
           {"strictly_decreasing", decreasing},
           {"total_nonincreasing", total_nonincreasing},
           {"extension", extension}};
  out["lambda_small"] = small ? json(*small) : json(nullptr);
  return out;
}

inline json run_girsanov(const ExperimentConfig& c, ArtifactSink& sink) {
  const Grid& g = c.require_grid();
  if (!c.kernel.spec.component_bound())
    throw ValidationError("girsanov_check needs a bounded (truncated) kernel");
  const double T = c.particles.T;
  std::vector<double> flow_times;
  for (std::size_t k = 0, K = steps_in(T, c.girsanov.flow_dt); k <= K; ++k)
    flow_times.push_back(static_cast<double>(k) * c.girsanov.flow_dt);
  const auto fpe = detail::run_fpe(c, g, flow_times);
  const FrozenDrift drift = FrozenDrift::from_flow(fpe.snapshots, c.kernel.spec);

  SimConfig free = c.sim();
  free.kernel = KernelSpec::zero();
  free.truncation_schedule.clear();
  free.record_increments = true;
  const auto base = simulate(free);
  if (!base.ok()) throw PartialRun(*base.abort_reason);
  const auto gw = girsanov_weight(*base.path, drift.as_field_drift());
  const auto x1 = [](std::span<const double> x) { return x[0]; };
  const auto rw = gw.reweighted(x1);

  SimConfig drifted = c.sim();
  drifted.seed = derive_seed(c.seed, 1);
  const auto dres = simulate_frozen(drifted, drift.as_field_drift());
  if (!dres.ok()) throw PartialRun(*dres.abort_reason);
  std::vector<double> dx;
  const auto& fin = dres.snapshots.back();
  for (std::size_t i = 0; i < fin.N; ++i) dx.push_back(fin.positions[i * fin.d]);
  const auto dm = mean_and_se(dx);

  const double z_weight = gw.mean_weight.std_error > 0 ? std::abs(gw.mean_weight.mean - 1.0) / gw.mean_weight.std_error : 0.0;
  const double z_mean = std::abs(rw.mean - dm.mean) / std::hypot(rw.std_error, dm.std_error);
  json summary{{"paths", c.particles.N},
               {"mean_weight", gw.mean_weight.mean},
               {"mean_weight_se", gw.mean_weight.std_error},
               {"z_weight", z_weight},
               {"reweighted_mean", rw.mean},
               {"reweighted_se", rw.std_error},
               {"drifted_mean", dm.mean},
               {"drifted_se", dm.std_error},
               {"z_mean", z_mean}};
  sink.jsonl("girsanov.jsonl", {summary});
  return summary;
}

namespace detail {

inline DensitySnapshots fit_densities(const ExperimentConfig& c, const Grid& g, const Grid* also,
                                      DensitySnapshots* refined) {
  const auto times = snapshot_times(c);
  DensitySnapshots out;
  const auto& src = c.fit.density_source;
  if (src == "exact_heat") {
    if (!c.kernel.spec.is_zero()) throw ValidationError("fit.density_source 'exact_heat' requires the zero kernel");
    const Measure mu0 = initial_measure(c.initial, g);
    for (double t : times) {
      out.emplace_back(t, heat_semigroup(mu0, 2.0 * t, g));
      if (refined) refined->emplace_back(t, heat_semigroup(initial_measure(c.initial, *also), 2.0 * t, *also));
    }
  } else if (src == "fpe") {
    for (auto& s : run_fpe(c, g, times).snapshots) out.push_back(std::move(s));
    if (refined)
      for (auto& s : run_fpe(c, *also, times).snapshots) refined->push_back(std::move(s));
  } else {
    SimConfig s = c.sim();
    s.snapshot_times = times;
    const auto res = checked_simulate(s);
    for (std::size_t k = 0; k < times.size(); ++k) {
      out.emplace_back(times[k], kde(res.snapshots[k], std::nullopt, g, c.fit.bandwidth_floor_cells * g.min_spacing()));
      if (refined)
        refined->emplace_back(times[k], kde(res.snapshots[k], std::nullopt, *also,
                                            c.fit.bandwidth_floor_cells * g.min_spacing()));
    }
  }
  return out;
}

template <typename FitFn>
json run_fit(const ExperimentConfig& c, ArtifactSink& sink, const char* name, FitFn&& fit) {
  const Grid& g = c.require_grid();
  const Grid fine = g.refined(2);
  DensitySnapshots refined;
  const auto snaps = fit_densities(c, g, &fine, c.fit.refine_check ? &refined : nullptr);
  const FitOptions opt{c.fit.threshold, c.fit.c_max};
  const BoundFit f = fit(snaps, initial_measure(c.initial, g), c.fit.gamma_search, opt);
  json out{{"fit", fit_json(f)}, {"density_source", c.fit.density_source}};
  io::CsvTable t({"t", "constant"});
  for (std::size_t k = 0; k < f.per_time.size(); ++k) t.row({fmtd(snaps[k].first), fmtd(f.per_time[k])});
  if (!f.per_time.empty()) {
    const auto [lo, hi] = std::minmax_element(f.per_time.begin(), f.per_time.end());
    out["per_time_spread"] = *lo > 0.0 ? *hi / *lo : kInf;
  }
  if (c.fit.refine_check) {
    const BoundFit r = fit(refined, initial_measure(c.initial, fine), c.fit.gamma_search, opt);
    out["refined"] = fit_json(r);
    out["c_ratio"] = std::max(f.c / r.c, r.c / f.c);
    out["gamma_ratio"] = std::max(f.gamma / r.gamma, r.gamma / f.gamma);
  }
  sink.csv(std::string(name) + ".csv", t);
  sink.jsonl(std::string(name) + ".jsonl", {out});
  return out;
}

}  // namespace detail

inline json run_bounds_fit(const ExperimentConfig& c, ArtifactSink& sink) {
  return detail::run_fit(c, sink, "bounds_fit", [](const auto&... a) { return fit_two_sided(a...); });
}

inline json run_gradient_fit(const ExperimentConfig& c, ArtifactSink& sink) {
  if (!c.kernel.spec.is_divergence_free())
    throw ValidationError("gradient_fit needs a divergence-free (rotational or zero) kernel");
  return detail::run_fit(c, sink, "gradient_fit", [](const auto&... a) { return fit_gradient_bound(a...); });
}

/// Gaussian bumps exp(-|x - m|^2 / (2 w^2)) centred at m e_1, on the grid.
inline std::vector<KrylovTest> bump_family(const Grid& g, const std::vector<double>& centers,
                                           const std::vector<double>& widths) {
  std::vector<KrylovTest> tests;
  for (double w : widths)
    for (double m : centers) {
      const auto f = SpaceTimeFunction::from_fn(g, [&](std::span<const double> x) {
        double r2 = (x[0] - m) * (x[0] - m);
        for (std::size_t k = 1; k < x.size(); ++k) r2 += x[k] * x[k];
        return std::exp(-r2 / (2.0 * w * w));
      });
      tests.push_back({"bump(m=" + io::fmt(m) + ",w=" + io::fmt(w) + ")", f});
    }
  return tests;
}

namespace detail {

inline Trajectory path_run(const ExperimentConfig& c, double dt, std::uint64_t seed, bool zero_kernel = false) {
  SimConfig s = c.sim();
  s.dt = dt;
  s.seed = seed;
  s.record_path = true;
  s.snapshot_times = {s.T};
  if (zero_kernel) {
    s.kernel = KernelSpec::zero();
    s.truncation_schedule.clear();
  }
  auto r = checked_simulate(s);
  return std::move(*r.path);
}

inline json krylov_json(const KrylovReport& rep) {
  json per = json::array();
  for (const auto& e : rep.per_test)
    per.push_back({{"test", e.id}, {"lhs", e.lhs}, {"lhs_se", e.lhs_se}, {"norm", e.norm}, {"ratio", e.ratio}});
  return {{"ratio_max", rep.ratio_max},
          {"run_ratio_max", rep.run_ratio_max},
          {"dt_stability", rep.dt_stability},
          {"per_test", per}};
}

}  // namespace detail

inline json run_krylov(const ExperimentConfig& c, ArtifactSink& sink) {
  const Grid& g = c.require_grid();
  const auto tests = bump_family(g, c.krylov.bump_centers, c.krylov.bump_widths);
  std::vector<Trajectory> runs;
  for (double dt : c.krylov.dts) runs.push_back(detail::path_run(c, dt, c.seed));
  std::vector<const Trajectory*> ptrs;
  for (const auto& r : runs) ptrs.push_back(&r);
  const auto rep = krylov_check(ptrs, tests, c.krylov.norm);
  std::vector<json> records;
  for (const auto& e : rep.per_test)
    records.push_back({{"test", e.id}, {"lhs", e.lhs}, {"lhs_se", e.lhs_se}, {"norm", e.norm}, {"ratio", e.ratio}});
  records.push_back({{"summary", detail::krylov_json(rep)}});
  sink.jsonl("krylov.jsonl", records);
  return detail::krylov_json(rep);
}

/// Truncated power-law envelope min(kappa |x - y|^{1 - alpha}, n) as a two-point test.
inline TwoPointFunction envelope_test(double kappa, double alpha, double n) {
  TwoPointFunction f;
  f.fn = [=](double, std::span<const double> x, std::span<const double> y) {
    double r2 = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) r2 += (x[k] - y[k]) * (x[k] - y[k]);
    if (r2 == 0.0) return n;
    return std::min(kappa * std::pow(std::sqrt(r2), 1.0 - alpha), n);
  };
  return f;
}

inline json run_pair_krylov(const ExperimentConfig& c, ArtifactSink& sink) {
  const Grid& g = c.require_grid();
  const auto& pk = c.pair_krylov;
  std::vector<std::pair<Trajectory, Trajectory>> runs;
  for (double dt : pk.dts)
    runs.emplace_back(detail::path_run(c, dt, c.seed), detail::path_run(c, dt, derive_seed(c.seed, 1)));
  std::vector<std::pair<const Trajectory*, const Trajectory*>> ptrs;
  for (const auto& [a, b] : runs) ptrs.emplace_back(&a, &b);
  const auto rep = pair_krylov_check(ptrs, envelope_test(pk.kappa, pk.alpha, pk.truncation), g, pk.p1, pk.p2, pk.q0,
                                     "envelope");
  const json out = detail::krylov_json(rep);
  sink.jsonl("pair_krylov.jsonl", {out});
  return out;
}

inline json run_moments(const ExperimentConfig& c, ArtifactSink& sink) {
  SimConfig s = c.sim();
  s.record_path = true;
  const auto r = detail::checked_simulate(s);
  const auto& tr = *r.path;
  const double beta = c.moments.beta;
  io::CsvTable mt({"t", "moment"});
  double m0 = 0.0, mmax = 0.0;
  for (std::size_t k = 0; k <= tr.steps(); ++k) {
    const ParticleEnsemble e(tr.N, tr.d, tr.positions[k], static_cast<double>(k) * tr.dt);
    const double m = empirical_moment(e, beta);
    if (k == 0) m0 = m;
    mmax = std::max(mmax, m);
    mt.row({detail::fmtd(e.time), detail::fmtd(m)});
  }
  sink.csv("moments.csv", mt);
  io::CsvTable it({"delta", "mean", "se", "ratio"});
  std::vector<double> ratios;
  for (double delta : c.moments.deltas) {
    const auto est = increment_statistic(tr, delta, beta);
    const double ratio = est.mean / std::pow(delta, beta / 2.0);
    ratios.push_back(ratio);
    it.row({detail::fmtd(delta), detail::fmtd(est.mean), detail::fmtd(est.std_error), detail::fmtd(ratio)});
  }
  sink.csv("increments.csv", it);
  const auto [lo, hi] = std::minmax_element(ratios.begin(), ratios.end());
  return {{"beta", beta},
          {"initial_moment", m0},
          {"max_moment", mmax},
          {"moment_bound_ok", mmax <= 10.0 * (m0 + 1.0)},
          {"increment_ratios", ratios},
          {"increment_spread", *hi / *lo}};
}

/// Dispatches to the named experiment.
inline json run_experiment(const ExperimentConfig& c, ArtifactSink& sink) {
  const auto& e = c.experiment;
  if (e == "simulate") return run_simulate(c, sink);
  if (e == "fpe") return run_fpe_experiment(c, sink);
  if (e == "superpose") return run_superpose(c, sink);
  if (e == "chaos") return run_chaos(c, sink);
  if (e == "truncation_sweep") return run_truncation_sweep(c, sink);
  if (e == "zvonkin_sweep") return run_zvonkin_sweep(c, sink);
  if (e == "girsanov_check") return run_girsanov(c, sink);
  if (e == "bounds_fit") return run_bounds_fit(c, sink);
  if (e == "gradient_fit") return run_gradient_fit(c, sink);
  if (e == "krylov_check") return run_krylov(c, sink);
  if (e == "pair_krylov") return run_pair_krylov(c, sink);
  if (e == "moments") return run_moments(c, sink);
  throw ValidationError("unknown experiment '" + e + "'");
}

// ---------------------------------------------------------------------------
// Run with manifest

enum ExitCode : int { kExitOk = 0, kExitValidation = 2, kExitNumerical = 3 };

struct RunStatus {
  int exit_code = kExitOk;
  std::string message;
  json summary;
};

inline json versions_json() {
  return {{"mvlov", kVersion},
          {"compiler", __VERSION__},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
}

/// Runs a parsed config, writes artifacts and manifest.json into output_dir.
inline RunStatus run(const ExperimentConfig& c) {
  const auto start = std::chrono::steady_clock::now();
  ArtifactSink sink(c.config_hash);
  RunStatus st;
  bool partial = false;
  try {
    st.summary = run_experiment(c, sink);
  } catch (const ValidationError& e) {
    st.exit_code = kExitValidation;
    st.message = e.what();
  } catch (const NumericalAbort& e) {
    st.exit_code = kExitNumerical;
    st.message = e.what();
    partial = true;
  }
  if (st.exit_code == kExitValidation) return st;
  const std::filesystem::path dir(c.output_dir);
  std::filesystem::create_directories(dir);
  json arts = json::array();
  for (const auto& a : sink.items()) {
    std::ofstream out(dir / a.name, std::ios::binary);
    out.write(a.bytes.data(), static_cast<std::streamsize>(a.bytes.size()));
    if (!out) throw std::runtime_error("cannot write " + (dir / a.name).string());
    arts.push_back({{"path", a.name}, {"sha256", io::sha256_hex(a.bytes)}, {"bytes", a.bytes.size()}, {"partial", partial}});
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  json manifest{{"experiment", c.experiment},
                {"config_hash", c.config_hash},
                {"seed", c.seed},
                {"config", c.raw},
                {"artifacts", arts},
                {"wall_time_s", wall},
                {"status", st.exit_code == kExitOk ? "ok" : "numerical_abort"},
                {"summary", st.summary},
                {"versions", versions_json()}};
  if (partial) manifest["abort_reason"] = st.message;
  std::ofstream mf(dir / "manifest.json");
  mf << manifest.dump(2) << "\n";
  return st;
}

/// Human-readable schema of the config file.
inline json config_schema() {
  const json num = "number", num_list = "number or list of d numbers";
  return {
      {"experiment", json{{"type", "string"}, {"enum", experiment_names()}, {"required", true}}},
      {"seed", "unsigned integer (default 0)"},
      {"output_dir", "string (default \"out\")"},
      {"workers", "unsigned integer, 0 = MVLOV_THREADS or hardware (default 0)"},
      {"particles", {{"N", "integer >= 2 (1000)"}, {"d", "1..3 (1)"}, {"dt", "number (0.01)"}, {"T", "number (1)"},
                     {"snapshot_times", "list of multiples of dt (default [T])"}, {"record_path", "bool (false)"}}},
      {"kernel", {{"form", "zero | power_law | constant (zero)"}, {"kappa", num}, {"alpha", "number in [0, 2)"},
                  {"direction", "radial | rotational (radial)"}, {"value", "list (constant kernel)"},
                  {"truncation", "number > 0"}, {"schedule", "list of {from, level}"}}},
      {"diffusion", {{"type", "sqrt2 | diagonal (sqrt2)"}, {"c0", "number (diagonal ellipticity constant)"}}},
      {"initial", {{"type", "point | gaussian | uniform_box (point)"}, {"mean", num_list}, {"var", num},
                   {"cov", "d x d row-major list"}, {"lo", num_list}, {"hi", num_list}}},
      {"grid", {{"lo", num_list}, {"hi", num_list}, {"cells", "integer or list of d integers"}}},
      {"fpe", {{"dt", "number, 0 = largest stable (0)"}, {"boundary", "no_flux | periodic (no_flux)"}}},
      {"superpose", {{"replicas", "integer (1)"}, {"bandwidth", "number (Silverman when absent)"}}},
      {"chaos", {{"N_values", "increasing integers"}, {"replicas", "integer >= 100 (100)"},
                 {"reference", "fpe | largest_n (fpe)"}, {"bootstrap", "integer (200)"}}},
      {"truncation_sweep", {{"levels", "list of numbers > 0"}, {"betas", "list of numbers > 0"}}},
      {"zvonkin", {{"lambdas", "list of numbers >= 1"}, {"T", num}, {"dt", "number, 0 = upwind-stable (0)"},
                   {"boundary", "periodic | no_flux (periodic)"}, {"smallness", "number (0.5)"},
                   {"lambda_limit", "number (1e6)"}}},
      {"girsanov", {{"flow_dt", "number (0.01)"}}},
      {"fit", {{"gamma_search", "list of numbers >= 1"}, {"threshold", "number (1e-12)"}, {"c_max", "number (10)"},
               {"density_source", "particles | fpe | exact_heat (particles)"}, {"refine_check", "bool (false)"},
               {"bandwidth_floor_cells", "number (2)"}}},
      {"krylov", {{"dts", "list"}, {"p", num}, {"q", "number or \"inf\""}, {"r", num},
                  {"lattice", "continuum_sup | unit_lattice"}, {"bump_centers", "list"}, {"bump_widths", "list"}}},
      {"pair_krylov", {{"dts", "list"}, {"p1", num}, {"p2", num}, {"q0", num}, {"kappa", num}, {"alpha", num},
                       {"truncation", num}}},
      {"moments", {{"beta", "number >= 1 (4)"}, {"deltas", "list of multiples of dt"}}},
  };
}

}  // namespace mvlov
