#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "p2p/errors.hpp"

namespace p2p::geometry {

using Vec3 = std::array<double, 3>;

struct PointCloud {
  std::vector<Vec3> coords;
  /// Per-point part labels; empty when the cloud is unlabeled.
  std::vector<int> labels;
  std::string id;

  std::size_t size() const { return coords.size(); }
  bool has_labels() const { return !labels.empty(); }

  void validate() const {
    for (const auto& p : coords)
      for (double v : p)
        if (!std::isfinite(v)) throw InputError("point cloud '" + id + "' has a non-finite coordinate");
    if (has_labels() && labels.size() != coords.size())
      throw InputError("point cloud '" + id + "': label count does not match point count");
    for (int l : labels)
      if (l < 0) throw InputError("point cloud '" + id + "': negative part label");
  }
};

}  // namespace p2p::geometry
