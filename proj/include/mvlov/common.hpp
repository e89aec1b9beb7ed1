#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mvlov {

/// Raised for inputs that fall outside an operation's contract (bad config,
/// mismatched grids, out-of-range exponents). Maps to CLI exit status 2.
class ValidationError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a numerical run has to stop: non-finite particle positions,
/// negative FPE cells, CFL violations discovered mid-run. Maps to exit status 3.
class NumericalAbort : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline bool is_infinite_exponent(double p) { return std::isinf(p) && p > 0; }

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

inline double norm(std::span<const double> v) { return std::sqrt(norm2(v)); }

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Pairwise (cascade) summation with a fixed split: blocks of at most 8 terms
/// are added left to right, larger ranges are split at the midpoint. The
/// result depends only on the input order, never on who calls it.
inline double pairwise_sum(std::span<const double> v) {
  const std::size_t n = v.size();
  if (n <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

/// Strided variant: sums v[offset], v[offset+stride], ... (count terms) with
/// the same tree shape as pairwise_sum over the gathered sequence.
inline double pairwise_sum_strided(std::span<const double> v, std::size_t offset,
                                   std::size_t stride, std::size_t count) {
  if (count <= 8) {
    double s = 0.0;
    for (std::size_t k = 0; k < count; ++k) s += v[offset + k * stride];
    return s;
  }
  const std::size_t half = count / 2;
  return pairwise_sum_strided(v, offset, stride, half) +
         pairwise_sum_strided(v, offset + half * stride, stride, count - half);
}

/// Worker count from MVLOV_THREADS (default: hardware concurrency). Only
/// affects speed; every parallel loop in the library writes disjoint outputs.
inline unsigned worker_count() {
  if (const char* env = std::getenv("MVLOV_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<unsigned>(std::min<long>(v, 1024));
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1u : hw;
}

/// Runs body(begin, end) over a static partition of [0, n). Each index is
/// visited exactly once; the partition never influences results as long as
/// body writes only to per-index outputs.
template <typename Body>
void parallel_for(std::size_t n, Body&& body, unsigned workers = worker_count()) {
  if (n == 0) return;
  workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, workers), n));
  if (workers == 1) {
    body(std::size_t{0}, n);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (unsigned w = 1; w < workers; ++w) {
    const std::size_t b = w * chunk;
    const std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&body, b, e] { body(b, e); });
  }
  body(std::size_t{0}, std::min(n, chunk));
}

/// Sample mean and standard error of the mean.
struct MeanEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

inline MeanEstimate mean_and_se(std::span<const double> v) {
  MeanEstimate r;
  if (v.empty()) return r;
  const double n = static_cast<double>(v.size());
  r.mean = pairwise_sum(v) / n;
  if (v.size() < 2) return r;
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.std_error = std::sqrt(ss / (n - 1.0) / n);
  return r;
}

/// Least-squares slope of y against x.
inline double fit_slope(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
  }
  return sxy / sxx;
}

/// Number of whole steps of size dt in duration, tolerant to rounding.
inline std::size_t steps_in(double duration, double dt) {
  const double r = duration / dt;
  const double k = std::round(r);
  if (std::abs(r - k) > 1e-6 * std::max(1.0, k))
    throw ValidationError("duration " + std::to_string(duration) +
                          " is not a multiple of step " + std::to_string(dt));
  return static_cast<std::size_t>(k);
}

}  // namespace mvlov
