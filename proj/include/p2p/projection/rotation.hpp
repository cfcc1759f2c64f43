#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "p2p/errors.hpp"
#include "p2p/geometry/point_cloud.hpp"
#include "p2p/util/rng.hpp"

namespace p2p::projection {

using geometry::Vec3;
using Mat3 = std::array<std::array<double, 3>, 3>;

/// Projection view: azimuth theta in [-pi, pi], elevation phi in [-pi/2, pi/2].
struct ViewAngles {
  double theta = 0.0;
  double phi = 0.0;

  friend bool operator==(const ViewAngles&, const ViewAngles&) = default;
};

inline constexpr double kTrainPhiLo = -0.4 * std::numbers::pi;
inline constexpr double kTrainPhiHi = -0.2 * std::numbers::pi;

inline Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

/// Axis-angle (Rodrigues) rotation about a unit axis.
inline Mat3 axis_angle(const Vec3& u, double angle) {
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  return {{{c + u[0] * u[0] * t, u[0] * u[1] * t - u[2] * s, u[0] * u[2] * t + u[1] * s},
           {u[1] * u[0] * t + u[2] * s, c + u[1] * u[1] * t, u[1] * u[2] * t - u[0] * s},
           {u[2] * u[0] * t - u[1] * s, u[2] * u[1] * t + u[0] * s, c + u[2] * u[2] * t}}};
}

/// R = Rot(u_phi, phi) · Rot(z, theta) with u_phi = (sin theta, -cos theta, 0).
/// Points rotate as x' = R x (row form X' = X Rᵀ).
inline Mat3 rotation_matrix(const ViewAngles& v) {
  const Mat3 spin = axis_angle({0.0, 0.0, 1.0}, v.theta);
  const Mat3 tilt = axis_angle({std::sin(v.theta), -std::cos(v.theta), 0.0}, v.phi);
  return matmul(tilt, spin);
}

inline Vec3 rotate(const Mat3& r, const Vec3& p) {
  return {r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
          r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
          r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2]};
}

/// Random training view: theta ~ U[-pi, pi], phi ~ U[phi_lo, phi_hi]
/// (default [-0.4pi, -0.2pi]).
inline ViewAngles sample_train_view(Rng& rng, double phi_lo = kTrainPhiLo, double phi_hi = kTrainPhiHi) {
  const double theta = rng.uniform(-std::numbers::pi, std::numbers::pi);
  const double phi = rng.uniform(phi_lo, phi_hi);
  return {theta, phi};
}

/// Evaluation views: theta_i = -pi + 2pi*i/n_theta, phi evenly spaced over
/// [phi_lo, phi_hi] inclusive (default [-0.4pi, -0.2pi]; a single phi sits at
/// phi_lo). Theta-major order.
inline std::vector<ViewAngles> test_view_grid(std::size_t n_theta, std::size_t n_phi, double phi_lo = kTrainPhiLo,
                                              double phi_hi = kTrainPhiHi) {
  if (n_theta == 0 || n_phi == 0) throw ConfigError("view grid needs at least one theta and one phi");
  std::vector<ViewAngles> views;
  views.reserve(n_theta * n_phi);
  for (std::size_t i = 0; i < n_theta; ++i) {
    const double theta = -std::numbers::pi + 2.0 * std::numbers::pi * static_cast<double>(i) /
                                                  static_cast<double>(n_theta);
    for (std::size_t j = 0; j < n_phi; ++j) {
      const double phi =
          n_phi == 1 ? phi_lo
                     : phi_lo + (phi_hi - phi_lo) * static_cast<double>(j) / static_cast<double>(n_phi - 1);
      views.push_back({theta, phi});
    }
  }
  return views;
}

struct GridSize {
  std::size_t n_theta;
  std::size_t n_phi;
};

/// View-count ablation settings: N_theta in {2,4,...,12} at N_phi = 4, then
/// N_phi in {2,...,6} at N_theta = 10.
inline std::vector<GridSize> view_ablation_grid() {
  std::vector<GridSize> out;
  for (std::size_t t = 2; t <= 12; t += 2) out.push_back({t, 4});
  for (std::size_t p = 2; p <= 6; ++p) out.push_back({10, p});
  return out;
}

}  // namespace p2p::projection
