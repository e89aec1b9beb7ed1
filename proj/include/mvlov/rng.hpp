#pragma once

// Counter-based normal variates. Every draw is a pure function of
// (seed, stream purpose, particle, step, component block), so two runs that
// share a seed see identical noise no matter how the work is partitioned.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace mvlov {

/// Philox4x32 with 10 rounds (Salmon et al., SC'11).
class Philox4x32 {
public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  explicit constexpr Philox4x32(Key key) : key_(key) {}

  constexpr Counter operator()(Counter ctr) const {
    Key k = key_;
    for (int r = 0; r < 10; ++r) {
      ctr = round(ctr, k);
      k[0] += kW0;
      k[1] += kW1;
    }
    return ctr;
  }

private:
  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;

  static constexpr Counter round(const Counter& c, const Key& k) {
    const std::uint64_t p0 = std::uint64_t{kM0} * c[0];
    const std::uint64_t p1 = std::uint64_t{kM1} * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }

  Key key_;
};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Distinct purposes get unrelated keys from the same user seed.
enum class StreamPurpose : std::uint64_t {
  step_noise = 1,
  initial_law = 2,
  replica = 3,
  bootstrap = 4,
  test = 5,
};

class NormalStream {
public:
  NormalStream(std::uint64_t seed, StreamPurpose purpose)
      : gen_(make_key(seed, purpose)) {}

  /// Fills out with standard normals for (index, step). out.size() may be any
  /// length; components are produced two at a time by Box-Muller.
  // Kept out of line: inlined copies of the transcendental calls were seen to
  // differ in the last bit between call sites.
  [[gnu::noinline]] void fill(std::uint64_t index, std::uint64_t step, std::span<double> out) const {
    std::size_t k = 0;
    std::uint32_t block = 0;
    while (k < out.size()) {
      const auto r = gen_({static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
                           static_cast<std::uint32_t>(index), block++});
      const double u1 = to_unit_open(r[0], r[1]);
      const double u2 = to_unit_open(r[2], r[3]);
      const double rad = std::sqrt(-2.0 * std::log(u1));
      const double ang = 2.0 * std::numbers::pi * u2;
      out[k++] = rad * std::cos(ang);
      if (k < out.size()) out[k++] = rad * std::sin(ang);
    }
  }

  /// Uniform in (0,1) for (index, step).
  double uniform(std::uint64_t index, std::uint64_t step) const {
    const auto r = gen_({static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
                         static_cast<std::uint32_t>(index), 0xFFFFFFFFu});
    return to_unit_open(r[0], r[1]);
  }

private:
  static Philox4x32::Key make_key(std::uint64_t seed, StreamPurpose purpose) {
    const std::uint64_t k = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(purpose)));
    return {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
  }

  // 53-bit uniform strictly inside (0,1).
  static double to_unit_open(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = ((std::uint64_t{hi} << 32) | lo) >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  Philox4x32 gen_;
};

/// Seed for replica r of a run seeded with seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t replica) {
  return splitmix64(seed ^ splitmix64(replica + 0x5DEECE66Dull));
}

}  // namespace mvlov
