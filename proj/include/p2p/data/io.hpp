#pragma once

// Text formats.
//
// OFF: first line exactly "OFF"; then "V F E"; then V lines "x y z"; then F
// lines "n i_1 ... i_n" (n >= 3, polygons fan-triangulated). Blank lines and
// lines starting with '#' are skipped. Anything after the last face is an
// error.
//
// XYZ: one point per line, "x y z" or "x y z label"; all lines must agree on
// whether a label is present.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "p2p/errors.hpp"
#include "p2p/geometry/point_cloud.hpp"
#include "p2p/util/rng.hpp"

namespace p2p::data {

struct Mesh {
  std::vector<geometry::Vec3> vertices;
  std::vector<std::array<std::size_t, 3>> triangles;
};

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const auto start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline double to_double(std::string_view tok, std::size_t line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v))
    throw ParseError(line, "expected a finite number, got '" + std::string(tok) + "'");
  return v;
}

template <typename Int>
Int to_int(std::string_view tok, std::size_t line) {
  Int v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError(line, "expected an integer, got '" + std::string(tok) + "'");
  return v;
}

/// Iterates non-blank, non-comment lines with 1-based line numbers.
class LineReader {
 public:
  explicit LineReader(std::string_view text) : text_(text) {}

  bool next(std::vector<std::string_view>& tokens) {
    while (pos_ < text_.size()) {
      auto end = text_.find('\n', pos_);
      if (end == std::string_view::npos) end = text_.size();
      auto line = text_.substr(pos_, end - pos_);
      pos_ = end + 1;
      ++line_;
      tokens = split_ws(line);
      if (tokens.empty() || tokens[0].front() == '#') continue;
      return true;
    }
    return false;
  }

  std::size_t line() const { return line_; }

  /// Raw next line (no skipping), for headers.
  bool raw(std::string_view& out) {
    if (pos_ >= text_.size()) return false;
    auto end = text_.find('\n', pos_);
    if (end == std::string_view::npos) end = text_.size();
    out = text_.substr(pos_, end - pos_);
    pos_ = end + 1;
    ++line_;
    return true;
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 0;
};

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

inline Mesh parse_off_text(std::string_view text) {
  detail::LineReader lr(text);
  std::string_view header;
  if (!lr.raw(header)) throw ParseError(1, "empty file, expected 'OFF' header");
  while (!header.empty() && (header.back() == '\r' || header.back() == ' ' || header.back() == '\t'))
    header.remove_suffix(1);
  if (header != "OFF") throw ParseError(1, "expected 'OFF' header, got '" + std::string(header.substr(0, 32)) + "'");

  std::vector<std::string_view> tok;
  if (!lr.next(tok)) throw ParseError(lr.line() + 1, "missing vertex/face/edge counts");
  if (tok.size() != 3) throw ParseError(lr.line(), "counts line must hold exactly 3 integers");
  const auto nv = detail::to_int<std::size_t>(tok[0], lr.line());
  const auto nf = detail::to_int<std::size_t>(tok[1], lr.line());
  detail::to_int<std::size_t>(tok[2], lr.line());

  Mesh mesh;
  constexpr std::size_t kReserveCap = 1 << 20;
  mesh.vertices.reserve(std::min(nv, kReserveCap));
  for (std::size_t i = 0; i < nv; ++i) {
    if (!lr.next(tok)) throw ParseError(lr.line() + 1, "file ends after " + std::to_string(i) + " of " +
                                                           std::to_string(nv) + " vertices");
    if (tok.size() != 3) throw ParseError(lr.line(), "vertex line must hold exactly 3 numbers");
    mesh.vertices.push_back({detail::to_double(tok[0], lr.line()), detail::to_double(tok[1], lr.line()),
                             detail::to_double(tok[2], lr.line())});
  }
  for (std::size_t f = 0; f < nf; ++f) {
    if (!lr.next(tok))
      throw ParseError(lr.line() + 1, "file ends after " + std::to_string(f) + " of " + std::to_string(nf) + " faces");
    const auto n = detail::to_int<std::size_t>(tok[0], lr.line());
    if (n < 3) throw ParseError(lr.line(), "face with " + std::to_string(n) + " vertices cannot be triangulated");
    if (tok.size() != n + 1)
      throw ParseError(lr.line(), "face declares " + std::to_string(n) + " vertices but lists " +
                                      std::to_string(tok.size() - 1));
    std::vector<std::size_t> idx(n);
    for (std::size_t j = 0; j < n; ++j) {
      idx[j] = detail::to_int<std::size_t>(tok[j + 1], lr.line());
      if (idx[j] >= nv) throw ParseError(lr.line(), "vertex index " + std::to_string(idx[j]) + " out of range");
    }
    for (std::size_t j = 1; j + 1 < n; ++j) mesh.triangles.push_back({idx[0], idx[j], idx[j + 1]});
  }
  if (lr.next(tok)) throw ParseError(lr.line(), "unexpected content after the declared faces");
  return mesh;
}

inline Mesh parse_off(const std::string& path) { return parse_off_text(detail::read_text(path)); }

/// Area-weighted uniform sampling of the mesh surface.
inline geometry::PointCloud sample_mesh(const Mesh& mesh, std::size_t n, Rng& rng) {
  if (n == 0) throw InputError("sample_mesh: zero points requested");
  std::vector<double> cumulative;
  double total = 0.0;
  for (const auto& t : mesh.triangles) {
    const auto& a = mesh.vertices[t[0]];
    const auto& b = mesh.vertices[t[1]];
    const auto& c = mesh.vertices[t[2]];
    const geometry::Vec3 u{b[0] - a[0], b[1] - a[1], b[2] - a[2]}, v{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
    const geometry::Vec3 x{u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
    total += 0.5 * std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
    cumulative.push_back(total);
  }
  if (!(total > 0.0)) throw InputError("sample_mesh: mesh has zero surface area");
  geometry::PointCloud pc;
  pc.coords.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pick = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    if (it == cumulative.end()) --it;
    const auto& t = mesh.triangles[static_cast<std::size_t>(it - cumulative.begin())];
    const double r1 = std::sqrt(rng.uniform()), r2 = rng.uniform();
    const double wa = 1.0 - r1, wb = r1 * (1.0 - r2), wc = r1 * r2;
    geometry::Vec3 p;
    for (int d = 0; d < 3; ++d)
      p[d] = wa * mesh.vertices[t[0]][d] + wb * mesh.vertices[t[1]][d] + wc * mesh.vertices[t[2]][d];
    pc.coords.push_back(p);
  }
  return pc;
}

inline geometry::PointCloud parse_xyz_text(std::string_view text) {
  detail::LineReader lr(text);
  std::vector<std::string_view> tok;
  geometry::PointCloud pc;
  int columns = 0;
  while (lr.next(tok)) {
    if (tok.size() != 3 && tok.size() != 4)
      throw ParseError(lr.line(), "expected 'x y z' or 'x y z label', got " + std::to_string(tok.size()) + " fields");
    if (columns == 0) columns = static_cast<int>(tok.size());
    if (static_cast<int>(tok.size()) != columns)
      throw ParseError(lr.line(), "inconsistent column count (labels on some lines only)");
    pc.coords.push_back({detail::to_double(tok[0], lr.line()), detail::to_double(tok[1], lr.line()),
                         detail::to_double(tok[2], lr.line())});
    if (columns == 4) {
      const int l = detail::to_int<int>(tok[3], lr.line());
      if (l < 0) throw ParseError(lr.line(), "negative part label");
      pc.labels.push_back(l);
    }
  }
  if (pc.coords.empty()) throw ParseError(lr.line() == 0 ? 1 : lr.line(), "no points");
  return pc;
}

inline geometry::PointCloud parse_xyz(const std::string& path) {
  auto pc = parse_xyz_text(detail::read_text(path));
  pc.id = path;
  return pc;
}

/// Shortest round-trip formatting: parse_xyz(write_xyz(pc)) reproduces the
/// coordinates bit for bit.
inline std::string format_xyz(const geometry::PointCloud& pc) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < pc.size(); ++i) {
    for (int d = 0; d < 3; ++d) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof buf, pc.coords[i][d]);
      out.append(buf, end);
      out.push_back(d < 2 ? ' ' : (pc.has_labels() ? ' ' : '\n'));
    }
    if (pc.has_labels()) out += std::to_string(pc.labels[i]) + "\n";
  }
  return out;
}

inline void write_xyz(const geometry::PointCloud& pc, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << format_xyz(pc);
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace p2p::data
