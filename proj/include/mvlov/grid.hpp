#pragma once

// Rectangular cell-centred grids and the values that live on them.

#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mvlov/common.hpp"

namespace mvlov {

/// Box [lo, hi] split into cells[k] equal cells per axis. Flat indices are
/// row-major: the last axis varies fastest.
class Grid {
public:
  Grid() = default;
  Grid(std::vector<double> lo, std::vector<double> hi, std::vector<std::size_t> cells)
      : lo_(std::move(lo)), hi_(std::move(hi)), cells_(std::move(cells)) {
    if (lo_.empty() || lo_.size() != hi_.size() || lo_.size() != cells_.size())
      throw ValidationError("grid: lo, hi and cells must have the same nonzero length");
    for (std::size_t k = 0; k < dim(); ++k) {
      if (!(hi_[k] > lo_[k])) throw ValidationError("grid: hi must exceed lo on every axis");
      if (cells_[k] == 0) throw ValidationError("grid: every axis needs at least one cell");
    }
  }

  /// Cube [lo, hi]^d with n cells per axis.
  static Grid cube(std::size_t d, double lo, double hi, std::size_t n) {
    return Grid(std::vector<double>(d, lo), std::vector<double>(d, hi), std::vector<std::size_t>(d, n));
  }

  std::size_t dim() const { return lo_.size(); }
  const std::vector<double>& lo() const { return lo_; }
  const std::vector<double>& hi() const { return hi_; }
  const std::vector<std::size_t>& cells() const { return cells_; }
  double spacing(std::size_t axis) const { return (hi_[axis] - lo_[axis]) / static_cast<double>(cells_[axis]); }
  double min_spacing() const {
    double h = spacing(0);
    for (std::size_t k = 1; k < dim(); ++k) h = std::min(h, spacing(k));
    return h;
  }

  std::size_t size() const {
    std::size_t n = 1;
    for (auto c : cells_) n *= c;
    return n;
  }

  double cell_volume() const {
    double v = 1.0;
    for (std::size_t k = 0; k < dim(); ++k) v *= spacing(k);
    return v;
  }

  double center(std::size_t axis, std::size_t i) const {
    return lo_[axis] + (static_cast<double>(i) + 0.5) * spacing(axis);
  }

  /// Stride of axis in the flat index.
  std::size_t stride(std::size_t axis) const {
    std::size_t s = 1;
    for (std::size_t k = axis + 1; k < dim(); ++k) s *= cells_[k];
    return s;
  }

  void unflatten(std::size_t flat, std::span<std::size_t> idx) const {
    for (std::size_t k = dim(); k-- > 0;) {
      idx[k] = flat % cells_[k];
      flat /= cells_[k];
    }
  }

  std::size_t flatten(std::span<const std::size_t> idx) const {
    std::size_t f = 0;
    for (std::size_t k = 0; k < dim(); ++k) f = f * cells_[k] + idx[k];
    return f;
  }

  void center_of(std::size_t flat, std::span<double> x) const {
    for (std::size_t k = dim(); k-- > 0;) {
      x[k] = center(k, flat % cells_[k]);
      flat /= cells_[k];
    }
  }

  bool contains(std::span<const double> x) const {
    for (std::size_t k = 0; k < dim(); ++k)
      if (!(x[k] >= lo_[k] && x[k] <= hi_[k])) return false;
    return true;
  }

  bool operator==(const Grid& o) const {
    return lo_ == o.lo_ && hi_ == o.hi_ && cells_ == o.cells_;
  }

  /// Same box with every axis refined by factor.
  Grid refined(std::size_t factor) const {
    auto c = cells_;
    for (auto& v : c) v *= factor;
    return Grid(lo_, hi_, c);
  }

private:
  std::vector<double> lo_, hi_;
  std::vector<std::size_t> cells_;
};

inline void require_same_grid(const Grid& a, const Grid& b, const char* what) {
  if (!(a == b)) throw ValidationError(std::string(what) + ": grids do not match");
}

/// Multilinear interpolation weights on cell centres with constant extension
/// past the outermost centres. Calls visit(flat_index, weight) for 2^d corners.
template <typename Visit>
void for_each_interp_corner(const Grid& g, std::span<const double> x, Visit&& visit) {
  const std::size_t d = g.dim();
  std::array<std::size_t, 3> i0{};
  std::array<double, 3> w1{};
  for (std::size_t k = 0; k < d; ++k) {
    const double s = (x[k] - g.lo()[k]) / g.spacing(k) - 0.5;
    const double n = static_cast<double>(g.cells()[k]);
    if (s <= 0.0 || n == 1.0) {
      i0[k] = 0;
      w1[k] = 0.0;
    } else if (s >= n - 1.0) {
      i0[k] = g.cells()[k] - 1;
      w1[k] = 0.0;
    } else {
      const double f = std::floor(s);
      i0[k] = static_cast<std::size_t>(f);
      w1[k] = s - f;
    }
  }
  const std::size_t corners = std::size_t{1} << d;
  for (std::size_t c = 0; c < corners; ++c) {
    double w = 1.0;
    std::size_t flat = 0;
    bool skip = false;
    for (std::size_t k = 0; k < d; ++k) {
      const bool up = (c >> (d - 1 - k)) & 1u;
      const double wk = up ? w1[k] : 1.0 - w1[k];
      if (wk == 0.0) {
        skip = true;
        break;
      }
      w *= wk;
      flat = flat * g.cells()[k] + i0[k] + (up ? 1 : 0);
    }
    if (!skip) visit(flat, w);
  }
}

/// Nonnegative density values per cell.
struct GridDensity {
  Grid grid;
  std::vector<double> values;

  GridDensity() = default;
  GridDensity(Grid g, std::vector<double> v) : grid(std::move(g)), values(std::move(v)) {
    if (values.size() != grid.size()) throw ValidationError("density: value count does not match grid");
  }
  explicit GridDensity(Grid g) : grid(std::move(g)), values(grid.size(), 0.0) {}

  double mass() const { return pairwise_sum(values) * grid.cell_volume(); }

  /// Interpolated value; zero outside the box.
  double at(std::span<const double> x) const {
    if (!grid.contains(x)) return 0.0;
    double v = 0.0;
    for_each_interp_corner(grid, x, [&](std::size_t f, double w) { v += w * values[f]; });
    return v;
  }
};

/// d-vector per cell, stored cell-major (values[cell * d + k]).
struct VectorField {
  Grid grid;
  std::vector<double> values;

  VectorField() = default;
  explicit VectorField(Grid g) : grid(std::move(g)), values(grid.size() * grid.dim(), 0.0) {}

  std::size_t dim() const { return grid.dim(); }

  /// Interpolated vector with constant extension outside the box.
  void at(std::span<const double> x, std::span<double> out) const {
    const std::size_t d = dim();
    std::fill(out.begin(), out.end(), 0.0);
    for_each_interp_corner(grid, x, [&](std::size_t f, double w) {
      for (std::size_t k = 0; k < d; ++k) out[k] += w * values[f * d + k];
    });
  }

  double sup_norm() const {
    const std::size_t d = dim();
    double m = 0.0;
    for (std::size_t c = 0; c < grid.size(); ++c) m = std::max(m, norm({values.data() + c * d, d}));
    return m;
  }
};

/// Scalar function sampled on a grid at times t_k = k * dt (k < nt). A
/// single time slice represents a time-independent function.
struct SpaceTimeFunction {
  Grid grid;
  double dt = 0.0;
  std::size_t nt = 1;
  std::vector<double> values;  // [nt][cells]

  SpaceTimeFunction() = default;
  SpaceTimeFunction(Grid g, double dt_, std::size_t nt_)
      : grid(std::move(g)), dt(dt_), nt(nt_), values(grid.size() * nt_, 0.0) {}

  /// Time-independent function from a callable of x.
  static SpaceTimeFunction from_fn(const Grid& g, const std::function<double(std::span<const double>)>& f) {
    SpaceTimeFunction s(g, 0.0, 1);
    std::vector<double> x(g.dim());
    for (std::size_t c = 0; c < g.size(); ++c) {
      g.center_of(c, x);
      s.values[c] = f(x);
    }
    return s;
  }

  std::span<const double> slice(std::size_t k) const {
    return {values.data() + k * grid.size(), grid.size()};
  }
  std::span<double> slice(std::size_t k) { return {values.data() + k * grid.size(), grid.size()}; }

  std::size_t slice_at(double t) const {
    if (nt == 1 || dt <= 0.0) return 0;
    const auto k = static_cast<std::size_t>(std::max(0.0, std::floor(t / dt + 1e-9)));
    return std::min(k, nt - 1);
  }

  /// Interpolated value at (t, x) with constant extension outside the box.
  double at(double t, std::span<const double> x) const {
    const auto s = slice(slice_at(t));
    double v = 0.0;
    for_each_interp_corner(grid, x, [&](std::size_t f, double w) { v += w * s[f]; });
    return v;
  }
};

}  // namespace mvlov
