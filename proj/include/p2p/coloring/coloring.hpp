#pragma once

// Geometry-aware coloring: a residual basic block of two 3x3 convolutions
// smooths the sparse feature image, then two 1x1 convolutions predict RGB,
// squashed to [0, 1] by a sigmoid.

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "p2p/autodiff/ops.hpp"
#include "p2p/errors.hpp"
#include "p2p/nn/layers.hpp"
#include "p2p/nn/params.hpp"
#include "p2p/projection/project.hpp"
#include "p2p/util/rng.hpp"

namespace p2p::coloring {

struct ColorImage {
  ad::Tensor rgb;  // [H, W, 3]
  bool normalized = false;
};

using Channels = std::array<double, 3>;

inline constexpr Channels kImageNetMean{0.485, 0.456, 0.406};
inline constexpr Channels kImageNetStd{0.229, 0.224, 0.225};

inline void init_coloring(nn::LayerParams& params, std::size_t channels, Rng& rng,
                          const std::string& prefix = "coloring.") {
  const auto cls = nn::TuningClass::prompt;
  const auto c = channels;
  params.add(prefix + "block.conv1.weight", nn::kaiming_uniform({3, 3, c, c}, 9 * c, rng), cls);
  params.add(prefix + "block.conv1.bias", ad::Tensor::zeros({c}), cls);
  params.add(prefix + "block.conv2.weight", nn::kaiming_uniform({3, 3, c, c}, 9 * c, rng), cls);
  params.add(prefix + "block.conv2.bias", ad::Tensor::zeros({c}), cls);
  params.add(prefix + "mix.weight", nn::kaiming_uniform({1, 1, c, c}, c, rng), cls);
  params.add(prefix + "mix.bias", ad::Tensor::zeros({c}), cls);
  params.add(prefix + "rgb.weight", nn::xavier_uniform({1, 1, c, 3}, c, 3, rng), cls);
  params.add(prefix + "rgb.bias", ad::Tensor::zeros({3}), cls);
}

/// Maps F̂ to a colour image in [0, 1].
inline ColorImage colorize(const projection::FeatureImage& fimg, const nn::LayerParams& params,
                           const std::string& prefix = "coloring.") {
  auto p = [&](const std::string& name) { return params.get(prefix + name); };
  const auto& w1 = p("block.conv1.weight");
  if (w1.dim(2) != fimg.channels())
    throw ConfigError("colorize: feature image has " + std::to_string(fimg.channels()) +
                      " channels, coloring expects " + std::to_string(w1.dim(2)));
  const auto h = fimg.height(), w = fimg.width();
  // F̂ is zero outside the occupied pixels, so the first convolution reads
  // only those rows.
  auto y = nn::conv2d_sparse_input(fimg.pixel_features, fimg.binning.occupied, h, w, w1, p("block.conv1.bias"));
  y = ad::relu(y);
  y = nn::conv2d(y, p("block.conv2.weight"), p("block.conv2.bias"), 1, 1);
  y = ad::relu(ad::add(y, fimg.image));
  y = ad::relu(nn::conv2d(y, p("mix.weight"), p("mix.bias")));
  y = nn::conv2d(y, p("rgb.weight"), p("rgb.bias"));
  return {ad::sigmoid(y), false};
}

inline ColorImage normalize_for_backbone(const ColorImage& img, const Channels& mean = kImageNetMean,
                                         const Channels& std = kImageNetStd) {
  if (img.normalized) throw ContractError("normalize_for_backbone: image is already normalized");
  auto m = ad::Tensor::from({3}, {mean[0], mean[1], mean[2]});
  auto s = ad::Tensor::from({3}, {std[0], std[1], std[2]});
  return {ad::div(ad::sub(img.rgb, m), s), true};
}

inline ColorImage denormalize(const ColorImage& img, const Channels& mean = kImageNetMean,
                              const Channels& std = kImageNetStd) {
  if (!img.normalized) throw ContractError("denormalize: image is not normalized");
  auto m = ad::Tensor::from({3}, {mean[0], mean[1], mean[2]});
  auto s = ad::Tensor::from({3}, {std[0], std[1], std[2]});
  return {ad::add(ad::mul(img.rgb, s), m), false};
}

/// Anisotropic total variation: sum of absolute differences between
/// horizontally and vertically adjacent pixels, over all channels, divided
/// by the channel count.
inline double total_variation(std::span<const double> img, std::size_t h, std::size_t w, std::size_t c) {
  double tv = 0.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k) {
        const double v = img[(y * w + x) * c + k];
        if (x + 1 < w) tv += std::abs(img[(y * w + x + 1) * c + k] - v);
        if (y + 1 < h) tv += std::abs(img[((y + 1) * w + x) * c + k] - v);
      }
  return tv / static_cast<double>(c);
}

}  // namespace p2p::coloring
