#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>

#include "helpers.hpp"
#include "p2p/data/augment.hpp"
#include "p2p/data/dataset.hpp"
#include "p2p/data/io.hpp"
#include "p2p/data/synthetic.hpp"

namespace {

using namespace p2p;
using p2p::testing::TempDir;

double norm3(const geometry::Vec3& p) { return std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]); }

bool same_cloud(const geometry::PointCloud& a, const geometry::PointCloud& b) {
  return a.coords == b.coords && a.labels == b.labels;
}

// --- synthetic shapes ------------------------------------------------------

TEST(Synthetic, SphereIsOnUnitRadius) {
  const auto pc = data::gen_synthetic(data::ShapeKind::sphere, 2000, 1);
  for (const auto& p : pc.coords) EXPECT_NEAR(norm3(p), 1.0, 1e-9);
}

TEST(Synthetic, CubeFacesGetAreaProportionalCounts) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto pc = data::gen_synthetic(data::ShapeKind::cube, 600, seed);
    // Face from geometry alone: the axis with the largest magnitude and its sign.
    std::map<int, int> per_face;
    std::map<int, std::set<int>> label_to_face;
    for (std::size_t i = 0; i < pc.size(); ++i) {
      const auto& p = pc.coords[i];
      int axis = 0;
      for (int d = 1; d < 3; ++d)
        if (std::abs(p[d]) > std::abs(p[axis])) axis = d;
      const int face = 2 * axis + (p[axis] > 0.0 ? 1 : 0);
      ++per_face[face];
      label_to_face[pc.labels[i]].insert(face);
    }
    ASSERT_EQ(per_face.size(), 6u);
    for (const auto& [face, n] : per_face) EXPECT_GE(n, 60) << "seed " << seed << " face " << face;
    // Part labels are the faces.
    EXPECT_EQ(label_to_face.size(), 6u);
    for (const auto& [label, faces] : label_to_face) EXPECT_EQ(faces.size(), 1u) << "label " << label;
  }
}

TEST(Synthetic, SameSeedIsBitIdentical) {
  for (auto k : data::kShapeKinds) {
    EXPECT_TRUE(same_cloud(data::gen_synthetic(k, 300, 7), data::gen_synthetic(k, 300, 7)));
    EXPECT_FALSE(same_cloud(data::gen_synthetic(k, 300, 7), data::gen_synthetic(k, 300, 8)));
  }
}

TEST(Synthetic, LabelsPartitionPointsAndShapesFitUnitBall) {
  for (auto k : data::kShapeKinds)
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto pc = data::gen_synthetic(k, 500, seed);
      ASSERT_EQ(pc.labels.size(), pc.size());
      std::set<int> seen;
      for (int l : pc.labels) {
        EXPECT_GE(l, 0);
        EXPECT_LT(l, static_cast<int>(data::part_count(k)));
        seen.insert(l);
      }
      EXPECT_EQ(seen.size(), data::part_count(k)) << data::to_string(k);
      for (const auto& p : pc.coords) EXPECT_LE(norm3(p), 1.0 + 1e-9);
    }
}

TEST(Synthetic, KindNamesAndErrors) {
  for (auto k : data::kShapeKinds) EXPECT_EQ(data::parse_shape_kind(data::to_string(k)), k);
  EXPECT_THROW(data::parse_shape_kind("dodecahedron"), InputError);
  EXPECT_THROW(data::gen_synthetic(data::ShapeKind::cube, 10, 0), InputError);
}

// --- OFF / XYZ -------------------------------------------------------------

constexpr const char* kSquareOff =
    "OFF\n"
    "# unit square in the z = 0 plane\n"
    "4 2 0\n"
    "0 0 0\n1 0 0\n1 1 0\n0 1 0\n"
    "3 0 1 2\n3 0 2 3\n";

TEST(Off, UnitSquareSamplesStayInsideAndCentre) {
  const auto mesh = data::parse_off_text(kSquareOff);
  ASSERT_EQ(mesh.vertices.size(), 4u);
  ASSERT_EQ(mesh.triangles.size(), 2u);
  Rng rng(3);
  const auto pc = data::sample_mesh(mesh, 1000, rng);
  ASSERT_EQ(pc.size(), 1000u);
  double mx = 0.0, my = 0.0;
  for (const auto& p : pc.coords) {
    EXPECT_GE(p[0], -1e-12);
    EXPECT_LE(p[0], 1.0 + 1e-12);
    EXPECT_GE(p[1], -1e-12);
    EXPECT_LE(p[1], 1.0 + 1e-12);
    EXPECT_EQ(p[2], 0.0);
    mx += p[0], my += p[1];
  }
  EXPECT_NEAR(mx / 1000.0, 0.5, 0.05);
  EXPECT_NEAR(my / 1000.0, 0.5, 0.05);
}

TEST(Off, QuadFaceIsTriangulated) {
  const auto mesh = data::parse_off_text("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n");
  EXPECT_EQ(mesh.triangles.size(), 2u);
}

TEST(Off, HeaderIsCaseSensitive) {
  std::string text = kSquareOff;
  text[0] = 'o';
  EXPECT_THROW(data::parse_off_text(text), ParseError);
}

TEST(Off, ErrorsCarryLineNumbers) {
  auto line_of = [](const std::string& text) {
    try {
      data::parse_off_text(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return std::size_t{0};
  };
  EXPECT_EQ(line_of("OFF\n4 2 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n3 0 1 2\n"), 8u);  // missing face
  EXPECT_EQ(line_of("OFF\n3 1 0\n0 0 0\n1 0 x\n0 1 0\n3 0 1 2\n"), 4u);        // bad number
  EXPECT_EQ(line_of("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n2 0 1\n"), 6u);          // degenerate face
  EXPECT_EQ(line_of("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 9\n"), 6u);        // bad index
  EXPECT_EQ(line_of("OFF\n3 1\n"), 2u);                                          // short counts
}

TEST(Xyz, RoundTripIsExact) {
  TempDir dir("xyz");
  Rng rng(4);
  geometry::PointCloud pc;
  for (int i = 0; i < 200; ++i) {
    pc.coords.push_back({rng.normal() * 1e-7, rng.uniform(-1.0, 1.0), rng.normal() * 1e5});
    pc.labels.push_back(static_cast<int>(rng.index(5)));
  }
  data::write_xyz(pc, dir.file("a.xyz"));
  const auto back = data::parse_xyz(dir.file("a.xyz"));
  EXPECT_EQ(back.coords, pc.coords);
  EXPECT_EQ(back.labels, pc.labels);

  pc.labels.clear();
  data::write_xyz(pc, dir.file("b.xyz"));
  const auto unlabeled = data::parse_xyz(dir.file("b.xyz"));
  EXPECT_EQ(unlabeled.coords, pc.coords);
  EXPECT_FALSE(unlabeled.has_labels());
}

TEST(Xyz, Errors) {
  EXPECT_THROW(data::parse_xyz_text(""), ParseError);
  EXPECT_THROW(data::parse_xyz_text("1 2\n"), ParseError);
  EXPECT_THROW(data::parse_xyz_text("1 2 3\n1 2 3 0\n"), ParseError);
  EXPECT_THROW(data::parse_xyz_text("1 2 nan\n"), ParseError);
  EXPECT_THROW(data::parse_xyz_text("1 2 3 -1\n"), ParseError);
  EXPECT_THROW(data::parse_xyz("/nonexistent/p2p/file.xyz"), IoError);
}

// Random and mutated inputs either parse or raise a parse error; nothing else.
TEST(Parsers, FuzzedInputsAreTotal) {
  Rng rng(5);
  const std::string seeds[] = {kSquareOff, "0.5 0.25 1\n-1 2 3\n", "1 2 3 4\n5 6 7 8\n"};
  const std::string alphabet = "OFF0123456789 .-+eE#\n\t\rxnaif";
  for (int trial = 0; trial < 4000; ++trial) {
    std::string text;
    if (trial % 2 == 0) {
      const auto n = rng.index(80);
      for (std::size_t i = 0; i < n; ++i)
        text.push_back(trial % 4 == 0 ? static_cast<char>(rng.index(256)) : alphabet[rng.index(alphabet.size())]);
    } else {
      text = seeds[rng.index(3)];
      const auto edits = 1 + rng.index(4);
      for (std::size_t e = 0; e < edits && !text.empty(); ++e) {
        const auto pos = rng.index(text.size());
        switch (rng.index(3)) {
          case 0: text[pos] = alphabet[rng.index(alphabet.size())]; break;
          case 1: text.erase(pos, 1); break;
          default: text.insert(pos, 1, alphabet[rng.index(alphabet.size())]);
        }
      }
    }
    for (int which = 0; which < 2; ++which) {
      try {
        if (which == 0)
          data::parse_off_text(text);
        else
          data::parse_xyz_text(text);
      } catch (const ParseError&) {
      } catch (const std::exception& e) {
        ADD_FAILURE() << "non-parse exception '" << e.what() << "' for input: " << text;
      }
    }
  }
}

// --- augmentation and resampling -------------------------------------------

TEST(Augment, DegenerateRangesAreIdentity) {
  const auto pc = p2p::testing::random_cloud(100, 6);
  Rng rng(7);
  const auto out = data::augment(pc, {1.0, 1.0, 0.0, 0.0}, rng);
  EXPECT_EQ(out.coords, pc.coords);
}

TEST(Augment, DefaultsAndBounds) {
  const data::AugmentConfig d;
  EXPECT_DOUBLE_EQ(d.scale_lo, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(d.scale_hi, 1.5);
  EXPECT_DOUBLE_EQ(d.shift_lo, -0.2);
  EXPECT_DOUBLE_EQ(d.shift_hi, 0.2);
  // Recover the per-axis affine map from two points and check its range.
  geometry::PointCloud pc;
  pc.coords = {{0, 0, 0}, {1, 1, 1}};
  Rng rng(8);
  for (int i = 0; i < 500; ++i) {
    const auto out = data::augment(pc, d, rng);
    for (int a = 0; a < 3; ++a) {
      const double t = out.coords[0][a], s = out.coords[1][a] - t;
      EXPECT_GE(s, 2.0 / 3.0 - 1e-12);
      EXPECT_LE(s, 1.5 + 1e-12);
      EXPECT_GE(t, -0.2);
      EXPECT_LE(t, 0.2);
    }
  }
}

TEST(Augment, SameSeedSameResult) {
  const auto pc = p2p::testing::random_cloud(50, 9);
  Rng a(10), b(10);
  EXPECT_EQ(data::augment(pc, {}, a).coords, data::augment(pc, {}, b).coords);
  EXPECT_THROW(
      {
        Rng r(1);
        data::augment(pc, {1.5, 1.0, 0.0, 0.0}, r);
      },
      ConfigError);
}

TEST(Resample, SameSizeIsPermutation) {
  auto pc = p2p::testing::random_cloud(300, 11);
  for (std::size_t i = 0; i < pc.size(); ++i) pc.labels.push_back(static_cast<int>(i));
  const auto out = data::resample(pc, 300, 12);
  ASSERT_EQ(out.size(), 300u);
  auto ids = out.labels;
  std::sort(ids.begin(), ids.end());
  for (int i = 0; i < 300; ++i) EXPECT_EQ(ids[i], i);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out.coords[i], pc.coords[out.labels[i]]);
}

TEST(Resample, UpsamplingUsesReplacementAndExactSize) {
  const auto pc = p2p::testing::random_cloud(10, 13);
  const auto out = data::resample(pc, 4096, 14);
  EXPECT_EQ(out.size(), 4096u);
  for (const auto& p : out.coords) EXPECT_NE(std::find(pc.coords.begin(), pc.coords.end(), p), pc.coords.end());
  EXPECT_THROW(data::resample(geometry::PointCloud{}, 5, 1), InputError);
}

TEST(Normalize, FitsUnitSphereAroundBoxCentre) {
  auto pc = p2p::testing::random_cloud(200, 15, 7.0);
  for (auto& p : pc.coords) p[0] += 30.0;
  data::normalize_unit_sphere(pc);
  double r = 0.0;
  geometry::Vec3 lo = pc.coords[0], hi = pc.coords[0];
  for (const auto& p : pc.coords) {
    r = std::max(r, norm3(p));
    for (int d = 0; d < 3; ++d) lo[d] = std::min(lo[d], p[d]), hi[d] = std::max(hi[d], p[d]);
  }
  EXPECT_NEAR(r, 1.0, 1e-12);
  for (int d = 0; d < 3; ++d) EXPECT_NEAR(lo[d] + hi[d], 0.0, 1e-12);
}

// --- datasets --------------------------------------------------------------

TEST(Dataset, SyntheticLayoutAndDeterminism) {
  using data::ShapeKind;
  const std::vector<ShapeKind> kinds{ShapeKind::sphere, ShapeKind::cube, ShapeKind::cylinder};
  const auto a = data::make_synthetic_dataset(kinds, 4, 2, 128, 16);
  const auto b = data::make_synthetic_dataset(kinds, 4, 2, 128, 16);
  EXPECT_EQ(a.train.size(), 12u);
  EXPECT_EQ(a.test.size(), 6u);
  EXPECT_EQ(a.train.num_parts(), 1u + 6u + 3u);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train.samples[i].cloud.id, b.train.samples[i].cloud.id);
    EXPECT_TRUE(same_cloud(a.train.samples[i].cloud, b.train.samples[i].cloud));
  }
  EXPECT_TRUE(std::is_sorted(a.train.samples.begin(), a.train.samples.end(),
                             [](const auto& x, const auto& y) { return x.cloud.id < y.cloud.id; }));
  // Global part ids stay inside their class's block.
  for (const auto& s : a.train.samples) {
    const auto& parts = a.train.class_parts[s.label];
    for (int l : s.cloud.labels) EXPECT_NE(std::find(parts.begin(), parts.end(), l), parts.end());
  }
  // Train and test draw different clouds.
  std::set<std::vector<geometry::Vec3>> train_clouds;
  for (const auto& s : a.train.samples) train_clouds.insert(s.cloud.coords);
  for (const auto& s : a.test.samples) EXPECT_FALSE(train_clouds.count(s.cloud.coords));
}

TEST(Dataset, SplitIsDeterministicAndDisjoint) {
  using data::ShapeKind;
  const auto pair = data::make_synthetic_dataset({ShapeKind::torus, ShapeKind::cone}, 30, 0, 64, 17);
  auto shuffled = pair.train;
  std::reverse(shuffled.samples.begin(), shuffled.samples.end());
  const auto s1 = data::split_dataset(pair.train, 0.3, 18);
  const auto s2 = data::split_dataset(shuffled, 0.3, 18);
  auto ids = [](const data::Dataset& d) {
    std::vector<std::string> v;
    for (const auto& s : d.samples) v.push_back(s.cloud.id);
    return v;
  };
  EXPECT_EQ(ids(s1.train), ids(s2.train));
  EXPECT_EQ(ids(s1.test), ids(s2.test));
  EXPECT_EQ(s1.train.size() + s1.test.size(), 60u);
  const auto tr = ids(s1.train);
  for (const auto& id : ids(s1.test)) EXPECT_EQ(std::find(tr.begin(), tr.end(), id), tr.end());
  EXPECT_GT(s1.test.size(), 5u);
  EXPECT_LT(s1.test.size(), 35u);
  EXPECT_THROW(data::split_dataset(pair.train, 1.5, 1), ConfigError);
}

TEST(Dataset, MeshDirectoryLoads) {
  TempDir dir("meshdir");
  namespace fs = std::filesystem;
  for (const char* cls : {"plane", "wedge"})
    for (const char* split : {"train", "test"}) {
      fs::create_directories(dir.path() / cls / split);
      std::ofstream(dir.path() / cls / split / "m0.off") << kSquareOff;
    }
  const auto pair = data::load_mesh_directory(dir.path().string(), 64, 19);
  EXPECT_EQ(pair.train.class_names, (std::vector<std::string>{"plane", "wedge"}));
  EXPECT_EQ(pair.train.size(), 2u);
  EXPECT_EQ(pair.test.size(), 2u);
  for (const auto& s : pair.train.samples) {
    EXPECT_EQ(s.cloud.size(), 64u);
    double r = 0.0;
    for (const auto& p : s.cloud.coords) r = std::max(r, norm3(p));
    EXPECT_NEAR(r, 1.0, 1e-12);
  }
  EXPECT_THROW(data::load_mesh_directory(dir.file("missing"), 64, 1), IoError);
}

}  // namespace
