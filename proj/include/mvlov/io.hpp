#pragma once

// Artifact encodings: MVL1 particle snapshots, MVG1 grid densities, CSV and
// JSON-lines text, and SHA-256 content digests.
//
// MVL1: "MVL1", u32 N, u32 d, f64 time, N*d f64 (particle-major).
// MVG1: "MVG1", u32 d, per axis {u32 cells, f64 lo, f64 hi}, f64 values row-major.
// All binary fields little-endian.

#include <openssl/evp.h>

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvlov/common.hpp"
#include "mvlov/grid.hpp"
#include "mvlov/particles.hpp"

namespace mvlov::io {

static_assert(std::endian::native == std::endian::little, "binary artifacts assume a little-endian host");

/// Shortest round-trip decimal form of a double.
inline std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

namespace detail {

template <typename T>
void put(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

template <typename T>
T get(std::string_view in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw ValidationError("truncated binary artifact");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace detail

inline std::string encode_mvl1(const ParticleEnsemble& ens) {
  std::string out = "MVL1";
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ens.N));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ens.d));
  detail::put<double>(out, ens.time);
  for (double v : ens.positions) detail::put<double>(out, v);
  return out;
}

inline ParticleEnsemble decode_mvl1(std::string_view in) {
  if (in.substr(0, 4) != "MVL1") throw ValidationError("not an MVL1 snapshot");
  std::size_t pos = 4;
  const auto N = detail::get<std::uint32_t>(in, pos);
  const auto d = detail::get<std::uint32_t>(in, pos);
  const double t = detail::get<double>(in, pos);
  std::vector<double> x(std::size_t{N} * d);
  for (auto& v : x) v = detail::get<double>(in, pos);
  return ParticleEnsemble(N, d, std::move(x), t);
}

inline std::string encode_mvg1(const GridDensity& rho) {
  const Grid& g = rho.grid;
  std::string out = "MVG1";
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(g.dim()));
  for (std::size_t a = 0; a < g.dim(); ++a) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(g.cells()[a]));
    detail::put<double>(out, g.lo()[a]);
    detail::put<double>(out, g.hi()[a]);
  }
  for (double v : rho.values) detail::put<double>(out, v);
  return out;
}

inline GridDensity decode_mvg1(std::string_view in) {
  if (in.substr(0, 4) != "MVG1") throw ValidationError("not an MVG1 grid");
  std::size_t pos = 4;
  const auto d = detail::get<std::uint32_t>(in, pos);
  std::vector<double> lo(d), hi(d);
  std::vector<std::size_t> cells(d);
  for (std::uint32_t a = 0; a < d; ++a) {
    cells[a] = detail::get<std::uint32_t>(in, pos);
    lo[a] = detail::get<double>(in, pos);
    hi[a] = detail::get<double>(in, pos);
  }
  Grid g(lo, hi, cells);
  std::vector<double> v(g.size());
  for (auto& x : v) x = detail::get<double>(in, pos);
  return GridDensity(g, std::move(v));
}

/// Rows t,i,x1..xd for a list of snapshots.
inline std::string particles_csv(std::span<const ParticleEnsemble> snaps) {
  std::string out = "t,i";
  const std::size_t d = snaps.empty() ? 0 : snaps.front().d;
  for (std::size_t k = 1; k <= d; ++k) out += ",x" + std::to_string(k);
  out += '\n';
  for (const auto& s : snaps)
    for (std::size_t i = 0; i < s.N; ++i) {
      out += fmt(s.time) + ',' + std::to_string(i);
      for (std::size_t k = 0; k < d; ++k) out += ',' + fmt(s.positions[i * d + k]);
      out += '\n';
    }
  return out;
}

/// Cell centres and values.
inline std::string grid_csv(const GridDensity& rho) {
  const Grid& g = rho.grid;
  std::string out;
  for (std::size_t k = 1; k <= g.dim(); ++k) out += "x" + std::to_string(k) + ",";
  out += "value\n";
  std::vector<double> x(g.dim());
  for (std::size_t c = 0; c < g.size(); ++c) {
    g.center_of(c, x);
    for (double v : x) out += fmt(v) + ',';
    out += fmt(rho.values[c]) + '\n';
  }
  return out;
}

/// Simple CSV table builder with a fixed header.
class CsvTable {
public:
  explicit CsvTable(std::vector<std::string> header) : width_(header.size()) {
    for (std::size_t k = 0; k < header.size(); ++k) text_ += (k ? "," : "") + header[k];
    text_ += '\n';
  }

  CsvTable& row(const std::vector<std::string>& cells) {
    if (cells.size() != width_) throw std::logic_error("csv row width mismatch");
    for (std::size_t k = 0; k < cells.size(); ++k) text_ += (k ? "," : "") + cells[k];
    text_ += '\n';
    return *this;
  }

  const std::string& str() const { return text_; }

private:
  std::size_t width_;
  std::string text_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace mvlov::io
