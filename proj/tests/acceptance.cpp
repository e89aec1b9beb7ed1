// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "mvlov/mvlov.hpp"

using namespace mvlov;
using json = nlohmann::json;

namespace {

const std::filesystem::path kConfigs = std::filesystem::path(MVLOV_SOURCE_DIR) / "configs";

ExperimentConfig load(const std::string& name, const json& patch = json::object()) {
  json j = json::parse(io::read_file(kConfigs / (name + ".json")));
  j.merge_patch(patch);
  return parse_config(j);
}

json run_summary(const ExperimentConfig& c) {
  ArtifactSink sink(c.config_hash);
  return run_experiment(c, sink);
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string seconds(double s) { return "time=" + num(s) + "s"; }

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double elapsed() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); }
};

// ---------------------------------------------------------------------------

double linf_rel(const GridDensity& a, const GridDensity& b) {
  double err = 0.0, peak = 0.0;
  for (std::size_t c = 0; c < a.values.size(); ++c) {
    err = std::max(err, std::abs(a.values[c] - b.values[c]));
    peak = std::max(peak, std::abs(b.values[c]));
  }
  return err / peak;
}

Outcome heat_exactness() {
  Timer clock;
  const auto c = load("heat_fpe");
  const double T = c.particles.T, var0 = c.initial.cov[0];
  auto error_at = [&](std::size_t cells) {
    const Grid g = Grid::cube(1, c.require_grid().lo()[0], c.require_grid().hi()[0], cells);
    const auto res = detail::run_fpe(c, g, {T});
    return linf_rel(res.snapshots.back().second, gaussian_density(g, std::vector<double>{0.0}, var0 + 2.0 * T));
  };
  const std::size_t n = c.require_grid().cells()[0];
  const double fine = error_at(n), coarse = error_at(n / 2);
  const double ratio = coarse / fine, t = clock.elapsed();
  return {fine <= 0.01 && ratio >= 3.4 && ratio <= 4.6 && t < 10.0,
          "linf_rel=" + num(fine) + " (<= 0.01) ratio=" + num(ratio) + " (in [3.4, 4.6]) " + seconds(t) + " (< 10)"};
}

Outcome superposition() {
  Timer clock;
  const auto big = run_summary(load("superpose_reference"));
  const auto small = run_summary(load("superpose_reference", {{"particles", {{"N", 5000}}}}));
  bool monotone = true;
  std::string rows;
  for (std::size_t k = 0; k < big["rows"].size(); ++k) {
    const double wb = big["rows"][k]["w1"], sb = big["rows"][k]["w1_se"];
    const double ws = small["rows"][k]["w1"], ss = small["rows"][k]["w1_se"];
    monotone = monotone && wb <= ws + 2.0 * std::hypot(sb, ss);
    rows += " t=" + num(big["rows"][k]["t"]) + ":" + num(wb) + "/" + num(ws);
  }
  const double worst = big["max_w1"], t = clock.elapsed();
  return {worst <= 0.02 && monotone && t < 300.0,
          "max_w1=" + num(worst) + " (<= 0.02) w1[N=20000/N=5000]" + rows + " " + seconds(t) + " (< 300)"};
}

Outcome two_sided_fit() {
  Timer clock;
  const auto heat = run_summary(load("bounds_fit_heat"));
  const double gamma_a = heat["fit"]["gamma"], c_a = heat["fit"]["c"];
  const bool a = gamma_a == 2.0 && c_a <= 2.1;

  const auto rot = run_summary(load("bounds_fit_rotational"));
  const double c_b = rot["fit"]["c"], gamma_b = rot["fit"]["gamma"], resid = rot["fit"]["residual"];
  const double cr = rot["c_ratio"], gr = rot["gamma_ratio"];
  const bool b = std::isfinite(c_b) && std::isfinite(gamma_b) && resid == 0.0 && cr <= 1.5 && gr <= 1.5;
  return {a && b, std::string("(a) ") + (a ? "pass" : "fail") + " gamma=" + num(gamma_a) + " (== 2) c=" + num(c_a) +
                      " (<= 2.1); (b) " + (b ? "pass" : "fail") + " c=" + num(c_b) + " gamma=" + num(gamma_b) +
                      " residual=" + num(resid) + " c_ratio=" + num(cr) + " gamma_ratio=" + num(gr) +
                      " (<= 1.5) " + seconds(clock.elapsed())};
}

Outcome gradient_fit() {
  Timer clock;
  const auto s = run_summary(load("gradient_fit_rotational"));
  const double c1 = s["fit"]["c"], spread = s["per_time_spread"];
  return {std::isfinite(c1) && spread <= 1.5, "c1=" + num(c1) + " gamma1=" + num(s["fit"]["gamma"]) +
                                                  " per_time_spread=" + num(spread) + " (<= 1.5) " +
                                                  seconds(clock.elapsed())};
}

Outcome zvonkin_scaling() {
  Timer clock;
  const auto s = run_summary(load("zvonkin_sweep"));
  const double slope = s["slope"], t = clock.elapsed();
  const bool dec = s["strictly_decreasing"], found = !s["lambda_small"].is_null();
  std::string grads;
  for (double v : s["sup_grad_u"]) grads += (grads.empty() ? "" : ",") + num(v);
  return {dec && slope >= -0.7 && slope <= -0.3 && found && t < 120.0,
          "sup_grad_u=[" + grads + "] strictly_decreasing=" + (dec ? "yes" : "no") + " slope=" + num(slope) +
              " (in [-0.7, -0.3]) lambda_small=" + (found ? num(s["lambda_small"]) : "none") + " " + seconds(t) +
              " (< 120)"};
}

Outcome krylov_stability() {
  Timer clock;
  const auto k = run_summary(load("krylov_reference"));
  const auto p = run_summary(load("pair_krylov"));
  const double ks = k["dt_stability"], ps = p["dt_stability"];
  return {ks <= 2.0 && ps <= 2.0, "krylov dt_stability=" + num(ks) + " ratio_max=" + num(k["ratio_max"]) +
                                      "; pair dt_stability=" + num(ps) + " ratio_max=" + num(p["ratio_max"]) +
                                      " (<= 2) " + seconds(clock.elapsed())};
}

Outcome girsanov() {
  Timer clock;
  const auto s = run_summary(load("girsanov"));
  const double zw = s["z_weight"], zm = s["z_mean"];
  return {zw <= 3.0 && zm <= 3.0, "E[weight]=" + num(s["mean_weight"]) + " z_weight=" + num(zw) +
                                      " reweighted=" + num(s["reweighted_mean"]) + " drifted=" +
                                      num(s["drifted_mean"]) + " z_mean=" + num(zm) + " (<= 3) " +
                                      seconds(clock.elapsed())};
}

Outcome moments() {
  Timer clock;
  const auto s = run_summary(load("moments_reference"));
  const double spread = s["increment_spread"];
  const bool bound = s["moment_bound_ok"];
  std::string ratios;
  for (double v : s["increment_ratios"]) ratios += (ratios.empty() ? "" : ",") + num(v);
  return {spread <= 2.0 && bound, "increment_ratios=[" + ratios + "] spread=" + num(spread) +
                                      " (<= 2) max_moment=" + num(s["max_moment"]) + " bound=" +
                                      num(10.0 * (double(s["initial_moment"]) + 1.0)) + " " +
                                      seconds(clock.elapsed())};
}

// ---------------------------------------------------------------------------

json manifest_artifacts(const ExperimentConfig& c) {
  const auto st = run(c);
  if (st.exit_code != kExitOk) throw std::runtime_error("determinism run failed: " + st.message);
  const auto m = json::parse(io::read_file(std::filesystem::path(c.output_dir) / "manifest.json"));
  return m["artifacts"];
}

double brute_force_ot(const std::vector<double>& a, const std::vector<double>& b, std::size_t n) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = kInf;
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) c += std::hypot(a[2 * i] - b[2 * perm[i]], a[2 * i + 1] - b[2 * perm[i] + 1]);
    best = std::min(best, c / static_cast<double>(n));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Outcome determinism() {
  Timer clock;
  std::string why;
  const auto tmp = std::filesystem::temp_directory_path() / "mvlov_acceptance";
  std::filesystem::remove_all(tmp);

  // byte-identical artifacts across worker counts
  bool same = true;
  for (const char* name : {"smoke_simulate", "superpose_reference"}) {
    json patch{{"output_dir", (tmp / name / "w1").string()}, {"workers", 1}};
    if (std::string(name) == "superpose_reference") patch["particles"] = {{"N", 2000}, {"dt", 0.01}};
    const auto a = manifest_artifacts(load(name, patch));
    patch["output_dir"] = (tmp / name / "w4").string();
    patch["workers"] = 4;
    const auto b = manifest_artifacts(load(name, patch));
    same = same && a == b && !a.empty();
  }
  why += std::string("artifacts_identical=") + (same ? "yes" : "no");

  // FPE mass drift with an interacting kernel
  const auto fc = load("superpose_reference", {{"grid", {{"cells", 192}}}});
  const double drift = detail::run_fpe(fc, fc.require_grid(), {fc.particles.T}).max_mass_drift;
  why += " fpe_mass_drift=" + num(drift);

  // KDE mass on a covering grid
  SimConfig sc;
  sc.N = 20000;
  sc.d = 2;
  sc.T = 0.1;
  sc.initial = InitialLaw::isotropic({0.0, 0.0}, 0.25);
  sc.seed = 41;
  sc.snapshot_times = {sc.T};
  const auto ens = simulate(sc).snapshots.back();
  const double kmass = kde(ens, std::nullopt, Grid::cube(2, -6.0, 6.0, 96)).mass();
  why += " kde_mass=" + num(kmass);

  // metric axioms on random instances
  std::mt19937_64 gen(101);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto points = [&](std::size_t n) {
    std::vector<double> v(2 * n);
    for (auto& x : v) x = u(gen);
    return WeightedPoints::uniform(2, v);
  };
  bool axioms = true;
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = points(6), b = points(6), c = points(6);
    const double ab = wasserstein_discrete(a, b, 2.0), ba = wasserstein_discrete(b, a, 2.0);
    const double ac = wasserstein_discrete(a, c, 2.0), cb = wasserstein_discrete(c, b, 2.0);
    axioms = axioms && std::abs(ab - ba) <= 1e-12 && ab <= ac + cb + 1e-12 && wasserstein_discrete(a, a, 2.0) <= 1e-12;
    std::vector<double> x(50), y(50), z(50);
    for (auto* v : {&x, &y, &z})
      for (auto& s : *v) s = u(gen);
    const double xy = wasserstein_1d(x, y), yx = wasserstein_1d(y, x);
    axioms = axioms && std::abs(xy - yx) <= 1e-12 && xy <= wasserstein_1d(x, z) + wasserstein_1d(z, y) + 1e-12;
  }
  why += std::string(" axioms=") + (axioms ? "yes" : "no");

  // exact OT vs brute-force enumeration on 8 atoms
  double ot_err = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = points(8), b = points(8);
    ot_err = std::max(ot_err, std::abs(wasserstein_discrete(a, b, 1.0) - brute_force_ot(a.positions, b.positions, 8)));
  }
  why += " ot_err=" + num(ot_err);
  std::filesystem::remove_all(tmp);

  const double t = clock.elapsed();
  const bool pass = same && drift <= 1e-10 && kmass >= 0.999 && kmass <= 1.001 && axioms && ot_err <= 1e-9 && t < 60.0;
  return {pass, why + " " + seconds(t) + " (< 60)"};
}

std::string chaos_table(const json& s) {
  std::string out;
  for (std::size_t k = 0; k < s["distances"].size(); ++k)
    out += " N=" + std::to_string(s["N_values"][k].get<std::size_t>()) + ":" + num(s["distances"][k]) + "+-" +
           num(s["std_errors"][k]);
  return out;
}

Outcome chaos() {
  Timer clock;
  const auto z = run_summary(load("chaos_zero"));
  bool finite = true;
  double lo = kInf, hi = -kInf, se_lo = 0.0, se_hi = 0.0;
  for (std::size_t k = 0; k < z["distances"].size(); ++k) {
    const double v = z["distances"][k], se = z["std_errors"][k];
    finite = finite && std::isfinite(v) && std::isfinite(se);
    if (v < lo) lo = v, se_lo = se;
    if (v > hi) hi = v, se_hi = se;
  }
  const bool flat = hi - lo <= 3.0 * std::hypot(se_lo, se_hi);
  const auto s = run_summary(load("chaos_singular"));
  for (double v : s["distances"]) finite = finite && std::isfinite(v);
  return {finite && flat, "zero kernel:" + chaos_table(z) + " flat=" + (flat ? "yes" : "no") +
                              "; singular kernel (reported only):" + chaos_table(s) + " " + seconds(clock.elapsed())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"heat-equation exactness", heat_exactness},
      {"superposition cross-check", superposition},
      {"two-sided bound fit", two_sided_fit},
      {"gradient bound fit", gradient_fit},
      {"zvonkin lambda-scaling", zvonkin_scaling},
      {"krylov ratio stability", krylov_stability},
      {"girsanov consistency", girsanov},
      {"moment and increment bounds", moments},
      {"determinism and conservation", determinism},
      {"propagation-of-chaos report", chaos},
  };
  // Optional arguments pick criteria by number; default is all of them.
  std::vector<bool> wanted(criteria.size(), argc <= 1);
  for (int a = 1; a < argc; ++a) {
    const int k = std::atoi(argv[a]);
    if (k >= 1 && static_cast<std::size_t>(k) <= criteria.size()) wanted[k - 1] = true;
  }
  int failed = 0, ran = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    if (!wanted[k]) continue;
    ++ran;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", k + 1, criteria[k].first, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria failed\n", failed, ran);
  return failed == 0 ? 0 : 1;
}
