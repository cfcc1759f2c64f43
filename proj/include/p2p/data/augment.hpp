#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "p2p/errors.hpp"
#include "p2p/geometry/point_cloud.hpp"
#include "p2p/util/rng.hpp"

namespace p2p::data {

struct AugmentConfig {
  double scale_lo = 2.0 / 3.0;
  double scale_hi = 3.0 / 2.0;
  double shift_lo = -0.2;
  double shift_hi = 0.2;

  void validate() const {
    if (!(scale_lo > 0.0)) throw ConfigError("augmentation scale lower bound must be positive");
    if (scale_lo > scale_hi) throw ConfigError("augmentation scale range is reversed");
    if (shift_lo > shift_hi) throw ConfigError("augmentation translation range is reversed");
  }
};

/// Moves the bounding-box centre to the origin and the farthest point to
/// radius 1. A single-location cloud is only centred.
inline void normalize_unit_sphere(geometry::PointCloud& pc) {
  if (pc.size() == 0) return;
  geometry::Vec3 lo = pc.coords[0], hi = pc.coords[0];
  for (const auto& p : pc.coords)
    for (int d = 0; d < 3; ++d) lo[d] = std::min(lo[d], p[d]), hi[d] = std::max(hi[d], p[d]);
  double r = 0.0;
  for (auto& p : pc.coords) {
    for (int d = 0; d < 3; ++d) p[d] -= (lo[d] + hi[d]) / 2.0;
    r = std::max(r, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
  }
  if (r > 0.0)
    for (auto& p : pc.coords)
      for (auto& v : p) v /= r;
}

/// Per-axis random scale followed by per-axis random translation.
inline geometry::PointCloud augment(const geometry::PointCloud& pc, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  double s[3], t[3];
  for (auto& v : s) v = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  for (auto& v : t) v = rng.uniform(cfg.shift_lo, cfg.shift_hi);
  auto out = pc;
  for (auto& p : out.coords)
    for (int d = 0; d < 3; ++d) p[d] = p[d] * s[d] + t[d];
  return out;
}

/// Draws n points: without replacement when the cloud is large enough,
/// with replacement otherwise. Labels follow their points.
inline geometry::PointCloud resample(const geometry::PointCloud& pc, std::size_t n, Rng& rng) {
  if (pc.size() == 0) throw InputError("resample: empty point cloud");
  if (n == 0) throw InputError("resample: zero points requested");
  std::vector<std::size_t> pick(n);
  if (pc.size() >= n) {
    std::vector<std::size_t> perm(pc.size());
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = 0; i < n; ++i) std::swap(perm[i], perm[i + rng.index(perm.size() - i)]);
    std::copy_n(perm.begin(), n, pick.begin());
  } else {
    for (auto& i : pick) i = rng.index(pc.size());
  }
  geometry::PointCloud out;
  out.id = pc.id;
  out.coords.reserve(n);
  for (auto i : pick) out.coords.push_back(pc.coords[i]);
  if (pc.has_labels())
    for (auto i : pick) out.labels.push_back(pc.labels[i]);
  return out;
}

inline geometry::PointCloud resample(const geometry::PointCloud& pc, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return resample(pc, n, rng);
}

}  // namespace p2p::data
