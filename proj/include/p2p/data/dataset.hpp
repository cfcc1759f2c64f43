#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "p2p/data/augment.hpp"
#include "p2p/data/io.hpp"
#include "p2p/data/synthetic.hpp"
#include "p2p/errors.hpp"
#include "p2p/geometry/point_cloud.hpp"
#include "p2p/util/rng.hpp"

namespace p2p::data {

struct Sample {
  geometry::PointCloud cloud;
  std::size_t label = 0;
};

struct Dataset {
  std::string split;
  std::vector<std::string> class_names;
  /// Part ids belonging to each class (segmentation); point labels are global ids.
  std::vector<std::vector<int>> class_parts;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::size_t num_classes() const { return class_names.size(); }
  std::size_t num_parts() const {
    std::size_t n = 0;
    for (const auto& p : class_parts) n += p.size();
    return n;
  }

  void sort_by_id() {
    std::stable_sort(samples.begin(), samples.end(),
                     [](const Sample& a, const Sample& b) { return a.cloud.id < b.cloud.id; });
  }
};

struct DatasetPair {
  Dataset train;
  Dataset test;
};

inline std::string zero_pad(std::size_t v, int width = 4) {
  auto s = std::to_string(v);
  return std::string(s.size() < static_cast<std::size_t>(width) ? width - s.size() : 0, '0') + s;
}

/// One class per shape kind; part labels are offset so every (class, part)
/// pair has its own global id. Sample ids are "<kind>/<split>/<index>".
inline DatasetPair make_synthetic_dataset(const std::vector<ShapeKind>& kinds, std::size_t train_per_class,
                                          std::size_t test_per_class, std::size_t n_points, std::uint64_t seed) {
  if (kinds.empty()) throw InputError("synthetic dataset needs at least one shape kind");
  DatasetPair out;
  out.train.split = "train";
  out.test.split = "test";
  int offset = 0;
  for (auto k : kinds) {
    std::vector<int> parts;
    for (std::size_t p = 0; p < part_count(k); ++p) parts.push_back(offset++);
    for (auto* ds : {&out.train, &out.test}) {
      ds->class_names.emplace_back(to_string(k));
      ds->class_parts.push_back(parts);
    }
  }
  for (std::size_t c = 0; c < kinds.size(); ++c) {
    const auto base = out.train.class_parts[c].front();
    for (std::uint64_t split = 0; split < 2; ++split) {
      auto& ds = split == 0 ? out.train : out.test;
      const auto count = split == 0 ? train_per_class : test_per_class;
      for (std::size_t i = 0; i < count; ++i) {
        const auto sample_seed = Rng::derive(seed, {c, split, i}).next_u64();
        auto pc = gen_synthetic(kinds[c], n_points, sample_seed);
        for (auto& l : pc.labels) l += base;
        pc.id = std::string(to_string(kinds[c])) + "/" + ds.split + "/" + zero_pad(i);
        ds.samples.push_back({std::move(pc), c});
      }
    }
  }
  out.train.sort_by_id();
  out.test.sort_by_id();
  return out;
}

/// Deterministic disjoint split of one sample list: each sample goes to the
/// test side with probability `test_ratio` under its own derived stream.
inline DatasetPair split_dataset(const Dataset& all, double test_ratio, std::uint64_t seed) {
  if (test_ratio < 0.0 || test_ratio > 1.0) throw ConfigError("test ratio must be in [0, 1]");
  DatasetPair out{all, all};
  out.train.split = "train";
  out.test.split = "test";
  out.train.samples.clear();
  out.test.samples.clear();
  std::vector<const Sample*> sorted;
  for (const auto& s : all.samples) sorted.push_back(&s);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const Sample* a, const Sample* b) { return a->cloud.id < b->cloud.id; });
  std::uint64_t i = 0;
  for (const auto* s : sorted) {
    std::uint64_t h = std::hash<std::string>{}(s->cloud.id);
    Rng rng = Rng::derive(seed, {h, i++});
    (rng.uniform() < test_ratio ? out.test : out.train).samples.push_back(*s);
  }
  return out;
}

/// ModelNet-style tree: <root>/<class>/{train,test}/*.off. Each mesh is
/// sampled to n_points and normalised into the unit sphere.
inline DatasetPair load_mesh_directory(const std::string& root, std::size_t n_points, std::uint64_t seed) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("dataset root '" + root + "' is not a directory");
  std::vector<std::string> classes;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) classes.push_back(e.path().filename().string());
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw InputError("dataset root '" + root + "' has no class directories");
  DatasetPair out;
  out.train.split = "train";
  out.test.split = "test";
  for (auto* ds : {&out.train, &out.test}) {
    ds->class_names = classes;
    ds->class_parts.assign(classes.size(), {0});
  }
  for (std::size_t c = 0; c < classes.size(); ++c)
    for (auto* ds : {&out.train, &out.test}) {
      const auto dir = fs::path(root) / classes[c] / ds->split;
      if (!fs::is_directory(dir)) continue;
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".off") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        const auto id = classes[c] + "/" + ds->split + "/" + f.stem().string();
        Rng rng = Rng::derive(seed, {std::hash<std::string>{}(id)});
        auto pc = sample_mesh(parse_off(f.string()), n_points, rng);
        normalize_unit_sphere(pc);
        pc.id = id;
        ds->samples.push_back({std::move(pc), c});
      }
    }
  out.train.sort_by_id();
  out.test.sort_by_id();
  return out;
}

}  // namespace p2p::data
