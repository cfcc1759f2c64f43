#pragma once

// Pyramid segmentation head over four captured backbone layers, the
// multi-label projected cross entropy, and per-point multi-view fusion.
//
// The four token maps [g, g, C] are rescaled to 4x, 2x, 1x and 0.5x of the
// patch grid (transpose convolutions with kernel 2 / 2x2 max pooling), reduced
// to `dim` channels, merged top-down, smoothed by a 3x3 convolution each,
// summed at the finest level, classified by a 1x1 convolution and upsampled to
// the input resolution.

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "p2p/autodiff/ops.hpp"
#include "p2p/backbone/vit.hpp"
#include "p2p/errors.hpp"
#include "p2p/heads/classify.hpp"
#include "p2p/nn/layers.hpp"
#include "p2p/nn/params.hpp"
#include "p2p/projection/project.hpp"
#include "p2p/util/rng.hpp"

namespace p2p::heads {

inline constexpr std::size_t kPyramidLevels = 4;

struct SegHeadConfig {
  std::size_t embed_dim = 64;
  std::size_t classes = 50;
  std::size_t dim = 32;
};

/// Blocks whose outputs feed the pyramid. A 12-block backbone uses the 3rd,
/// 5th, 7th and 11th block; other depths spread four taps evenly.
inline std::vector<std::size_t> default_capture_layers(std::size_t depth) {
  if (depth < kPyramidLevels)
    throw ConfigError("segmentation needs a backbone with at least 4 blocks, got " + std::to_string(depth));
  if (depth == 12) return {2, 4, 6, 10};
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i <= kPyramidLevels; ++i) out.push_back(i * depth / kPyramidLevels - 1);
  return out;
}

inline void init_seg_head(nn::LayerParams& params, const SegHeadConfig& cfg, Rng& rng,
                          const std::string& prefix = "seg_head.") {
  const auto c = cfg.embed_dim, d = cfg.dim;
  const auto cls = nn::TuningClass::head;
  auto add = [&](const std::string& name, ad::Shape wshape, std::size_t fan_in, std::size_t out) {
    params.add(prefix + name + ".weight", nn::kaiming_uniform(std::move(wshape), fan_in, rng), cls);
    params.add(prefix + name + ".bias", ad::Tensor::zeros({out}), cls);
  };
  add("up4a", {c, 2, 2, d}, c, d);
  add("up4b", {d, 2, 2, d}, d, d);
  add("up2", {c, 2, 2, d}, c, d);
  add("lat1", {1, 1, c, d}, c, d);
  add("lat05", {1, 1, c, d}, c, d);
  for (std::size_t l = 0; l < kPyramidLevels; ++l) add("smooth" + std::to_string(l), {3, 3, d, d}, 9 * d, d);
  params.add(prefix + "cls.weight", nn::xavier_uniform({1, 1, d, cfg.classes}, d, cfg.classes, rng), cls);
  params.add(prefix + "cls.bias", ad::Tensor::zeros({cfg.classes}), cls);
}

struct SegPrediction {
  ad::Tensor logits;  // [H, W, K]
};

/// Per-pixel part logits at image resolution.
inline SegPrediction seg_head(const backbone::BackboneOutput& out, const nn::LayerParams& params,
                              const backbone::BackboneConfig& bcfg, const std::string& prefix = "seg_head.") {
  if (out.intermediates.size() < kPyramidLevels)
    throw ConfigError("segmentation head needs 4 captured layers, got " + std::to_string(out.intermediates.size()));
  const auto g = bcfg.grid(), c = bcfg.embed_dim;
  if (g % 2 != 0) throw ConfigError("segmentation head needs an even patch grid, got " + std::to_string(g));
  if (bcfg.patch_size % 4 != 0)
    throw ConfigError("segmentation head needs a patch size divisible by 4, got " + std::to_string(bcfg.patch_size));
  auto p = [&](const std::string& name) { return params.get(prefix + name); };
  auto as_map = [&](const ad::Tensor& t) { return ad::reshape(t, {g, g, c}); };

  // Finest first: 4x, 2x, 1x, 0.5x.
  std::array<ad::Tensor, kPyramidLevels> lat;
  lat[0] = ad::relu(nn::upsample_transpose(as_map(out.intermediates[0]), p("up4a.weight"), p("up4a.bias"), 2));
  lat[0] = nn::upsample_transpose(lat[0], p("up4b.weight"), p("up4b.bias"), 2);
  lat[1] = nn::upsample_transpose(as_map(out.intermediates[1]), p("up2.weight"), p("up2.bias"), 2);
  lat[2] = nn::conv2d(as_map(out.intermediates[2]), p("lat1.weight"), p("lat1.bias"));
  lat[3] = nn::conv2d(nn::maxpool2x2(as_map(out.intermediates[3])), p("lat05.weight"), p("lat05.bias"));

  // Top-down merge, then smoothing.
  std::array<ad::Tensor, kPyramidLevels> merged;
  merged[3] = lat[3];
  for (std::size_t l = kPyramidLevels - 1; l-- > 0;) merged[l] = ad::add(lat[l], nn::upsample_nearest(merged[l + 1], 2));
  ad::Tensor fused;
  for (std::size_t l = 0; l < kPyramidLevels; ++l) {
    const auto name = "smooth" + std::to_string(l);
    auto s = ad::relu(nn::conv2d(merged[l], p(name + ".weight"), p(name + ".bias"), 1, 1));
    s = nn::upsample_nearest(s, std::size_t{1} << l);
    fused = l == 0 ? s : ad::add(fused, s);
  }
  auto logits = nn::conv2d(fused, p("cls.weight"), p("cls.bias"));
  return {nn::upsample_nearest(logits, bcfg.patch_size / 4)};
}

/// Mean over occupied pixels of -sum_k y_k log softmax(logits)_k.
inline ad::Tensor multilabel_ce(const ad::Tensor& logits, const projection::LabelImage& y) {
  if (logits.rank() != 3 || logits.dim(0) != y.height || logits.dim(1) != y.width || logits.dim(2) != y.classes)
    throw ShapeError("multilabel_ce: logits " + ad::to_string(logits.shape()) + " do not match a " +
                     std::to_string(y.height) + "x" + std::to_string(y.width) + "x" + std::to_string(y.classes) +
                     " label image");
  for (double v : y.y)
    if (v < 0.0 || !std::isfinite(v)) throw InputError("multilabel_ce: label distribution has a negative entry");
  const auto k = y.classes;
  std::vector<std::size_t> pixels;
  for (std::size_t i = 0; i < y.occupied.size(); ++i)
    if (y.occupied[i]) pixels.push_back(i);
  if (pixels.empty()) throw InputError("multilabel_ce: no occupied pixels");
  std::vector<double> target;
  target.reserve(pixels.size() * k);
  for (auto px : pixels) target.insert(target.end(), y.y.begin() + px * k, y.y.begin() + (px + 1) * k);
  auto rows = ad::gather_rows(ad::reshape(logits, {y.height * y.width, k}), pixels);
  auto logp = ad::log_softmax(rows, 1);
  auto t = ad::Tensor::from({pixels.size(), k}, std::move(target));
  return ad::scale(ad::sum(ad::mul(logp, t)), -1.0 / static_cast<double>(pixels.size()));
}

// ---------------------------------------------------------------------------
// Multi-view fusion

enum class VoteMode { sum, count };

/// Argmax with ties resolved to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Fuses per-view class probabilities. `sum` adds the probability vectors;
/// `count` gives each view one vote for its argmax.
inline std::size_t vote_classify(const std::vector<std::vector<double>>& probs_per_view,
                                 VoteMode mode = VoteMode::sum) {
  if (probs_per_view.empty()) throw ContractError("vote_classify: no views");
  const auto k = probs_per_view.front().size();
  std::vector<double> acc(k, 0.0);
  for (const auto& p : probs_per_view) {
    if (p.size() != k) throw ContractError("vote_classify: views disagree on the class count");
    if (mode == VoteMode::sum)
      for (std::size_t i = 0; i < k; ++i) acc[i] += p[i];
    else
      acc[argmax(p)] += 1.0;
  }
  return argmax(acc);
}

struct SegView {
  std::vector<double> probs;  // [H*W, K] softmax per pixel
  const projection::PixelBinning* binning = nullptr;
};

struct FusedSegmentation {
  std::vector<int> labels;    // per point
  std::vector<double> probs;  // [N, K], rows sum to 1
};

/// Per-pixel softmax of [H, W, K] logits, flattened row-major.
inline std::vector<double> pixel_softmax(const ad::Tensor& logits) {
  const auto k = logits.dim(2), n = logits.dim(0) * logits.dim(1);
  std::vector<double> out;
  out.reserve(n * k);
  auto v = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    auto p = softmax_values(v.subspan(i * k, k));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

/// Each point collects the probabilities of the pixel it landed in, in every
/// view, in the order given.
inline FusedSegmentation fuse_seg_views(const std::vector<SegView>& views, std::size_t points, std::size_t classes) {
  if (views.empty()) throw ContractError("fuse_seg_views: no views");
  FusedSegmentation out{std::vector<int>(points, 0), std::vector<double>(points * classes, 0.0)};
  for (const auto& v : views) {
    if (v.binning == nullptr || v.binning->point_count() != points)
      throw ContractError("fuse_seg_views: view binning does not cover " + std::to_string(points) + " points");
    if (v.probs.size() != v.binning->height * v.binning->width * classes)
      throw ContractError("fuse_seg_views: probability map does not match the binning");
    for (std::size_t i = 0; i < points; ++i) {
      const double* src = v.probs.data() + v.binning->point_pixel[i] * classes;
      double* dst = out.probs.data() + i * classes;
      for (std::size_t k = 0; k < classes; ++k) dst[k] += src[k];
    }
  }
  const double inv = 1.0 / static_cast<double>(views.size());
  for (std::size_t i = 0; i < points; ++i) {
    std::span<double> row(out.probs.data() + i * classes, classes);
    for (auto& x : row) x *= inv;
    out.labels[i] = static_cast<int>(argmax(row));
  }
  return out;
}

}  // namespace p2p::heads
