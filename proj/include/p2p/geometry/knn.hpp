#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "p2p/errors.hpp"
#include "p2p/geometry/point_cloud.hpp"

namespace p2p::geometry {

inline constexpr std::size_t kDefaultNeighbors = 32;

/// Row-major N x k neighbour table.
struct NeighborTable {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<std::size_t> index;

  std::span<const std::size_t> row(std::size_t i) const { return {index.data() + i * k, k}; }
};

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

/// Exhaustive k-nearest neighbours. Each point lists itself first, then the
/// k-1 closest other points ordered by (distance, index).
inline NeighborTable knn(std::span<const Vec3> points, std::size_t k) {
  const auto n = points.size();
  if (k == 0) throw InputError("knn: k must be positive");
  if (n < k)
    throw InputError("knn: need at least k=" + std::to_string(k) + " points, got " + std::to_string(n));
  NeighborTable table{n, k, std::vector<std::size_t>(n * k)};
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) cand.emplace_back(squared_distance(points[i], points[j]), j);
    const auto keep = static_cast<std::ptrdiff_t>(k - 1);
    if (keep > 0) {
      std::nth_element(cand.begin(), cand.begin() + keep - 1, cand.end());
      std::sort(cand.begin(), cand.begin() + keep);
    }
    auto* row = table.index.data() + i * k;
    row[0] = i;
    for (std::size_t r = 1; r < k; ++r) row[r] = cand[r - 1].second;
  }
  return table;
}

}  // namespace p2p::geometry
