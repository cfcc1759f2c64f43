#pragma once

// Geometry-preserved projection: rotate the cloud into a view, drop depth,
// bin the remaining two coordinates onto an H x W grid and sum the features
// of every point that lands in a pixel. No point is ever culled.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "p2p/autodiff/ops.hpp"
#include "p2p/errors.hpp"
#include "p2p/geometry/point_cloud.hpp"
#include "p2p/projection/rotation.hpp"

namespace p2p::projection {

/// Default border: 8 pixels at 224, scaled with the image size.
inline std::size_t default_margin(std::size_t image_size) {
  return static_cast<std::size_t>(std::lround(8.0 * static_cast<double>(image_size) / 224.0));
}

/// Pixel assignment of every point for one view.
struct PixelBinning {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::size_t> point_pixel;     // flat pixel (h*W + w) per point
  std::vector<std::size_t> occupied;        // sorted distinct occupied pixels
  std::vector<std::size_t> point_slot;      // index into `occupied` per point
  std::vector<std::size_t> member_offsets;  // CSR offsets, size occupied+1
  std::vector<std::size_t> members;         // point indices per slot, ascending

  std::size_t point_count() const { return point_pixel.size(); }

  std::span<const std::size_t> slot_members(std::size_t slot) const {
    return {members.data() + member_offsets[slot], member_offsets[slot + 1] - member_offsets[slot]};
  }

  /// S_{h,w}: the points that landed in pixel (h, w), possibly empty.
  std::span<const std::size_t> pixel_members(std::size_t h, std::size_t w) const {
    const auto flat = h * width + w;
    auto it = std::lower_bound(occupied.begin(), occupied.end(), flat);
    if (it == occupied.end() || *it != flat) return {};
    return slot_members(static_cast<std::size_t>(it - occupied.begin()));
  }

  std::vector<bool> occupancy() const {
    std::vector<bool> mask(height * width, false);
    for (auto p : occupied) mask[p] = true;
    return mask;
  }

  friend bool operator==(const PixelBinning&, const PixelBinning&) = default;
};

/// Bins points for a view. The larger of the two projected extents is mapped
/// onto [margin, size - margin); both axes share one scale and the object is
/// centred. A cloud with zero extent lands entirely on the centre pixel.
inline PixelBinning bin_points(std::span<const geometry::Vec3> coords, const ViewAngles& view,
                               std::size_t height, std::size_t width, std::size_t margin) {
  if (coords.empty()) throw InputError("projection of an empty point cloud");
  if (height <= 2 * margin || width <= 2 * margin)
    throw ConfigError("image " + std::to_string(height) + "x" + std::to_string(width) +
                      " too small for margin " + std::to_string(margin));
  const auto r = rotation_matrix(view);
  const auto n = coords.size();
  std::vector<double> u(n), v(n);
  double lo[2] = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  double hi[2] = {-lo[0], -lo[1]};
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = rotate(r, coords[i]);
    u[i] = p[0];
    v[i] = p[1];
    lo[0] = std::min(lo[0], u[i]);
    hi[0] = std::max(hi[0], u[i]);
    lo[1] = std::min(lo[1], v[i]);
    hi[1] = std::max(hi[1], v[i]);
  }
  const double extent = std::max(hi[0] - lo[0], hi[1] - lo[1]);
  const double usable = static_cast<double>(std::min(height, width) - 2 * margin);
  const double scale = extent > 0.0 ? usable / extent : 0.0;
  const double center[2] = {(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0};

  auto to_index = [&](double c, int d, std::size_t size) {
    const double f = std::floor((c - center[d]) * scale + static_cast<double>(size) / 2.0);
    const auto first = static_cast<double>(margin);
    const auto last = static_cast<double>(size - margin - 1);
    return static_cast<std::size_t>(std::clamp(f, first, last));
  };

  PixelBinning b;
  b.height = height;
  b.width = width;
  b.point_pixel.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    b.point_pixel[i] = to_index(u[i], 0, height) * width + to_index(v[i], 1, width);

  b.occupied = b.point_pixel;
  std::sort(b.occupied.begin(), b.occupied.end());
  b.occupied.erase(std::unique(b.occupied.begin(), b.occupied.end()), b.occupied.end());
  b.point_slot.resize(n);
  std::vector<std::size_t> counts(b.occupied.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto slot = static_cast<std::size_t>(
        std::lower_bound(b.occupied.begin(), b.occupied.end(), b.point_pixel[i]) - b.occupied.begin());
    b.point_slot[i] = slot;
    ++counts[slot];
  }
  b.member_offsets.assign(b.occupied.size() + 1, 0);
  for (std::size_t s = 0; s < counts.size(); ++s) b.member_offsets[s + 1] = b.member_offsets[s] + counts[s];
  b.members.resize(n);
  std::vector<std::size_t> fill(b.member_offsets.begin(), b.member_offsets.end() - 1);
  for (std::size_t i = 0; i < n; ++i) b.members[fill[b.point_slot[i]]++] = i;
  return b;
}

/// Projected feature image F̂ [H, W, C] plus its compact occupied-pixel form.
struct FeatureImage {
  ad::Tensor image;           // [H, W, C]
  ad::Tensor pixel_features;  // [M, C], row s = pixel binning.occupied[s]
  PixelBinning binning;

  std::size_t height() const { return binning.height; }
  std::size_t width() const { return binning.width; }
  std::size_t channels() const { return image.dim(2); }
};

/// Scatter-adds per-point features into the view's pixels. Gradients flow
/// back to the features; the binning itself is a constant of the forward pass.
inline FeatureImage project(const ad::Tensor& features, std::span<const geometry::Vec3> coords,
                            const ViewAngles& view, std::size_t height, std::size_t width,
                            std::size_t margin) {
  if (features.rank() != 2 || features.dim(0) != coords.size())
    throw ShapeError("project: features " + ad::to_string(features.shape()) + " do not align with " +
                     std::to_string(coords.size()) + " points");
  FeatureImage out;
  out.binning = bin_points(coords, view, height, width, margin);
  const auto c = features.dim(1);
  out.pixel_features = ad::scatter_add_rows(features, out.binning.point_slot, out.binning.occupied.size());
  out.image = ad::reshape(ad::scatter_add_rows(out.pixel_features, out.binning.occupied, height * width),
                          {height, width, c});
  return out;
}

/// Per-pixel part distribution y [H, W, K]; rows of occupied pixels sum to 1.
struct LabelImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t classes = 0;
  std::vector<double> y;
  std::vector<bool> occupied;

  double at(std::size_t h, std::size_t w, std::size_t k) const { return y[(h * width + w) * classes + k]; }
};

inline LabelImage labels_from_binning(std::span<const int> labels, const PixelBinning& b, std::size_t classes) {
  if (labels.size() != b.point_count()) throw InputError("label count does not match binned points");
  LabelImage out{b.height, b.width, classes, std::vector<double>(b.height * b.width * classes, 0.0),
                 b.occupancy()};
  for (std::size_t s = 0; s < b.occupied.size(); ++s) {
    const auto members = b.slot_members(s);
    double* row = out.y.data() + b.occupied[s] * classes;
    for (auto i : members) {
      const int l = labels[i];
      if (l < 0 || static_cast<std::size_t>(l) >= classes)
        throw InputError("part label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
      row[l] += 1.0;
    }
    for (std::size_t k = 0; k < classes; ++k) row[k] /= static_cast<double>(members.size());
  }
  return out;
}

/// Projects part labels exactly as `project` bins the points.
inline LabelImage project_labels(const geometry::PointCloud& pc, const ViewAngles& view, std::size_t height,
                                 std::size_t width, std::size_t margin, std::size_t classes) {
  if (!pc.has_labels()) throw InputError("project_labels: point cloud '" + pc.id + "' has no labels");
  return labels_from_binning(pc.labels, bin_points(pc.coords, view, height, width, margin), classes);
}

}  // namespace p2p::projection
