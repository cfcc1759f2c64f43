#pragma once

// Procedural labelled shapes. Every shape is sampled uniformly over its
// surface (patches chosen proportionally to area), then mapped analytically
// into the origin-centred unit sphere: the shape's bounding-box centre goes to
// the origin and its farthest surface point to radius 1.

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "p2p/errors.hpp"
#include "p2p/geometry/point_cloud.hpp"
#include "p2p/util/rng.hpp"

namespace p2p::data {

using geometry::PointCloud;
using geometry::Vec3;

enum class ShapeKind { sphere, cube, cylinder, torus, cone, l_bracket };

inline constexpr std::array<ShapeKind, 6> kShapeKinds{ShapeKind::sphere,   ShapeKind::cube,  ShapeKind::cylinder,
                                                      ShapeKind::torus,    ShapeKind::cone,  ShapeKind::l_bracket};
inline constexpr std::size_t kMinSyntheticPoints = 64;

inline std::string_view to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::cube: return "cube";
    case ShapeKind::cylinder: return "cylinder";
    case ShapeKind::torus: return "torus";
    case ShapeKind::cone: return "cone";
    case ShapeKind::l_bracket: return "L-bracket";
  }
  return "?";
}

inline ShapeKind parse_shape_kind(std::string_view s) {
  for (auto k : kShapeKinds)
    if (to_string(k) == s) return k;
  if (s == "l-bracket" || s == "l_bracket") return ShapeKind::l_bracket;
  throw InputError("unknown shape kind '" + std::string(s) + "'");
}

/// Number of analytic part regions a shape is labelled with.
///   sphere 1; cube 6 faces; cylinder side/top/bottom; torus outer/inner
///   half; cone side/base; L-bracket horizontal/vertical arm.
inline std::size_t part_count(ShapeKind k) {
  switch (k) {
    case ShapeKind::sphere: return 1;
    case ShapeKind::cube: return 6;
    case ShapeKind::cylinder: return 3;
    case ShapeKind::torus: return 2;
    case ShapeKind::cone: return 2;
    case ShapeKind::l_bracket: return 2;
  }
  return 0;
}

namespace detail {

struct SurfacePatch {
  double area;
  std::function<Vec3(Rng&)> sample;
  std::function<int(const Vec3&)> label;
};

/// Planar rectangle origin + a*u + b*v, (a, b) in [0,1]^2.
inline SurfacePatch rectangle(Vec3 origin, Vec3 u, Vec3 v, std::function<int(const Vec3&)> label) {
  auto len = [](const Vec3& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); };
  return {len(u) * len(v),
          [=](Rng& rng) {
            const double a = rng.uniform(), b = rng.uniform();
            return Vec3{origin[0] + a * u[0] + b * v[0], origin[1] + a * u[1] + b * v[1],
                        origin[2] + a * u[2] + b * v[2]};
          },
          std::move(label)};
}

inline std::function<int(const Vec3&)> constant(int l) {
  return [l](const Vec3&) { return l; };
}

struct ShapeModel {
  std::vector<SurfacePatch> patches;
  Vec3 center;
  double radius;
};

inline ShapeModel shape_model(ShapeKind kind) {
  constexpr double pi = std::numbers::pi;
  ShapeModel m;
  switch (kind) {
    case ShapeKind::sphere:
      m.patches.push_back({4.0 * pi,
                           [](Rng& rng) {
                             // Normalised Gaussian direction is uniform on the sphere.
                             for (;;) {
                               Vec3 p{rng.normal(), rng.normal(), rng.normal()};
                               const double r = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
                               if (r < 1e-12) continue;
                               return Vec3{p[0] / r, p[1] / r, p[2] / r};
                             }
                           },
                           constant(0)});
      m.center = {0, 0, 0};
      m.radius = 1.0;
      break;
    case ShapeKind::cube:
      // Faces -x, +x, -y, +y, -z, +z labelled 0..5.
      for (int axis = 0; axis < 3; ++axis)
        for (int side = 0; side < 2; ++side) {
          Vec3 o{-1, -1, -1}, u{0, 0, 0}, v{0, 0, 0};
          o[axis] = side ? 1.0 : -1.0;
          u[(axis + 1) % 3] = 2.0;
          v[(axis + 2) % 3] = 2.0;
          m.patches.push_back(rectangle(o, u, v, constant(2 * axis + side)));
        }
      m.center = {0, 0, 0};
      m.radius = std::sqrt(3.0);
      break;
    case ShapeKind::cylinder: {
      constexpr double r = 0.5, h = 2.0;
      m.patches.push_back({2.0 * pi * r * h,
                           [](Rng& rng) {
                             const double a = rng.uniform(0.0, 2.0 * pi);
                             return Vec3{r * std::cos(a), r * std::sin(a), rng.uniform(-h / 2, h / 2)};
                           },
                           constant(0)});
      for (int cap = 0; cap < 2; ++cap)
        m.patches.push_back({pi * r * r,
                             [cap](Rng& rng) {
                               const double a = rng.uniform(0.0, 2.0 * pi), s = r * std::sqrt(rng.uniform());
                               return Vec3{s * std::cos(a), s * std::sin(a), cap == 0 ? h / 2 : -h / 2};
                             },
                             constant(1 + cap)});
      m.center = {0, 0, 0};
      m.radius = std::sqrt(r * r + h * h / 4);
      break;
    }
    case ShapeKind::torus: {
      constexpr double big = 1.0, small = 0.3;
      m.patches.push_back({4.0 * pi * pi * big * small,
                           [](Rng& rng) {
                             // Tube angle accepted with probability proportional to the local
                             // circumference so the surface density is uniform.
                             double v;
                             do v = rng.uniform(0.0, 2.0 * pi);
                             while (rng.uniform() * (big + small) > big + small * std::cos(v));
                             const double u = rng.uniform(0.0, 2.0 * pi);
                             const double ring = big + small * std::cos(v);
                             return Vec3{ring * std::cos(u), ring * std::sin(u), small * std::sin(v)};
                           },
                           [](const Vec3& p) { return std::hypot(p[0], p[1]) >= big ? 0 : 1; }});
      m.center = {0, 0, 0};
      m.radius = big + small;
      break;
    }
    case ShapeKind::cone: {
      constexpr double r = 1.0, h = 2.0;
      const double slant = std::sqrt(r * r + h * h);
      m.patches.push_back({pi * r * slant,
                           [](Rng& rng) {
                             const double a = rng.uniform(0.0, 2.0 * pi), t = std::sqrt(rng.uniform());
                             return Vec3{t * r * std::cos(a), t * r * std::sin(a), h / 2 - t * h};
                           },
                           constant(0)});
      m.patches.push_back({pi * r * r,
                           [](Rng& rng) {
                             const double a = rng.uniform(0.0, 2.0 * pi), s = r * std::sqrt(rng.uniform());
                             return Vec3{s * std::cos(a), s * std::sin(a), -h / 2};
                           },
                           constant(1)});
      m.center = {0, 0, 0};
      m.radius = std::sqrt(r * r + h * h / 4);
      break;
    }
    case ShapeKind::l_bracket: {
      // L-shaped cross-section [0,2]x[0,.5] U [0,.5]x[0,2] extruded over z in [0,1].
      auto arm = [](const Vec3& p) { return p[1] < 0.5 ? 0 : 1; };
      auto rect = [&](Vec3 o, Vec3 u, Vec3 v) { m.patches.push_back(rectangle(o, u, v, arm)); };
      for (double z : {0.0, 1.0}) {
        rect({0, 0, z}, {2, 0, 0}, {0, 0.5, 0});
        rect({0, 0.5, z}, {0.5, 0, 0}, {0, 1.5, 0});
      }
      rect({0, 0, 0}, {2, 0, 0}, {0, 0, 1});        // y = 0
      rect({2, 0, 0}, {0, 0.5, 0}, {0, 0, 1});      // x = 2
      rect({0.5, 0.5, 0}, {1.5, 0, 0}, {0, 0, 1});  // y = 0.5, outer arm
      rect({0.5, 0.5, 0}, {0, 1.5, 0}, {0, 0, 1});  // x = 0.5
      rect({0, 2, 0}, {0.5, 0, 0}, {0, 0, 1});      // y = 2
      rect({0, 0, 0}, {0, 0.5, 0}, {0, 0, 1});      // x = 0, lower part
      rect({0, 0.5, 0}, {0, 1.5, 0}, {0, 0, 1});    // x = 0, upper part
      m.center = {1.0, 1.0, 0.5};
      m.radius = 1.5;
      break;
    }
  }
  return m;
}

}  // namespace detail

/// Samples `n_points` labelled surface points of a unit-normalised shape.
inline PointCloud gen_synthetic(ShapeKind kind, std::size_t n_points, std::uint64_t seed) {
  if (n_points < kMinSyntheticPoints)
    throw InputError("synthetic shapes need at least " + std::to_string(kMinSyntheticPoints) + " points, got " +
                     std::to_string(n_points));
  const auto model = detail::shape_model(kind);
  std::vector<double> cumulative;
  double total = 0.0;
  for (const auto& p : model.patches) cumulative.push_back(total += p.area);

  Rng rng = Rng::derive(seed, {static_cast<std::uint64_t>(kind)});
  PointCloud pc;
  pc.id = std::string(to_string(kind));
  pc.coords.reserve(n_points);
  pc.labels.reserve(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    const double pick = rng.uniform() * total;
    std::size_t k = 0;
    while (k + 1 < cumulative.size() && pick >= cumulative[k]) ++k;
    const auto& patch = model.patches[k];
    const Vec3 raw = patch.sample(rng);
    pc.labels.push_back(patch.label(raw));
    Vec3 q;
    for (int d = 0; d < 3; ++d) q[d] = (raw[d] - model.center[d]) / model.radius;
    pc.coords.push_back(q);
  }
  return pc;
}

inline PointCloud gen_synthetic(std::string_view kind, std::size_t n_points, std::uint64_t seed) {
  return gen_synthetic(parse_shape_kind(kind), n_points, seed);
}

}  // namespace p2p::data
