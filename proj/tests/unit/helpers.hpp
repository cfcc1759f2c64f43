#pragma once

// Shared fixtures for the unit tests. Oracles live next to the tests that
// use them; only generic helpers go here.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "p2p/autodiff/tensor.hpp"
#include "p2p/geometry/point_cloud.hpp"
#include "p2p/util/rng.hpp"

namespace p2p::testing {

inline ad::Tensor random_tensor(ad::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                                bool requires_grad = false) {
  Rng rng(seed);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return ad::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline geometry::PointCloud random_cloud(std::size_t n, std::uint64_t seed, double radius = 1.0) {
  Rng rng(seed);
  geometry::PointCloud pc;
  pc.id = "random_" + std::to_string(seed);
  pc.coords.resize(n);
  for (auto& p : pc.coords)
    for (auto& c : p) c = rng.uniform(-radius, radius);
  return pc;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Scratch directory removed at scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("p2p_test_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace p2p::testing
