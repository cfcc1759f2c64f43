#pragma once

// Edge-convolution geometry encoder.
//
//   f_i = max_{j in kNN(i)} relu( W · [e_i, e_j - e_i] + b )
//
// where e = per-point embedding of the coordinates. Neighbourhoods are always
// computed in coordinate space, including for the second edge convolution of
// the segmentation variant.

#include <cstddef>
#include <string>
#include <vector>

#include "p2p/autodiff/ops.hpp"
#include "p2p/geometry/knn.hpp"
#include "p2p/geometry/point_cloud.hpp"
#include "p2p/nn/layers.hpp"
#include "p2p/nn/params.hpp"
#include "p2p/util/rng.hpp"

namespace p2p::geometry {

enum class EncoderVariant { classification, segmentation };

struct EncoderConfig {
  EncoderVariant variant = EncoderVariant::classification;
  std::size_t k = kDefaultNeighbors;
  std::size_t embed_dim = 8;
  std::size_t edge_dim = 64;
  std::size_t edge2_dim = 128;  // segmentation only
  std::size_t out_dim = 64;
};

inline void init_encoder(nn::LayerParams& params, const EncoderConfig& cfg, Rng& rng,
                         const std::string& prefix = "encoder.") {
  const auto cls = nn::TuningClass::prompt;
  auto add_linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    params.add(prefix + name + ".weight", nn::kaiming_uniform({in, out}, in, rng), cls);
    params.add(prefix + name + ".bias", ad::Tensor::zeros({out}), cls);
  };
  add_linear("embed", 3, cfg.embed_dim);
  add_linear("edge1", 2 * cfg.embed_dim, cfg.edge_dim);
  std::size_t last = cfg.edge_dim;
  if (cfg.variant == EncoderVariant::segmentation) {
    add_linear("edge2", 2 * cfg.edge_dim, cfg.edge2_dim);
    last = cfg.edge2_dim;
  }
  add_linear("out", last, cfg.out_dim);
}

/// One edge convolution over feats [N, C] with weight [2C, Cout], bias [Cout].
///
/// Uses W·[e_i, e_j - e_i] = e_i·(W_top - W_bot) + e_j·W_bot, and that relu
/// and "add a per-point constant" both commute with the max over neighbours:
///   max_j relu(a_i + b_j) = relu(a_i + max_j b_j).
/// The weight product then runs once per point and no per-edge tensor is built.
inline ad::Tensor edge_conv(const ad::Tensor& feats, const NeighborTable& nbrs, const ad::Tensor& weight,
                            const ad::Tensor& bias) {
  const auto n = feats.dim(0), c = feats.dim(1);
  if (weight.rank() != 2 || weight.dim(0) != 2 * c)
    throw ShapeError("edge_conv: weight " + ad::to_string(weight.shape()) + " does not take 2x" +
                     std::to_string(c) + " inputs");
  if (nbrs.n != n) throw ShapeError("edge_conv: neighbour table size mismatch");
  auto w_top = ad::slice(weight, 0, 0, c);
  auto w_bot = ad::slice(weight, 0, c, c);
  auto center_term = ad::add(ad::matmul(feats, ad::sub(w_top, w_bot)), bias);
  auto neighbor_term = ad::matmul(feats, w_bot);
  return ad::relu(ad::add(center_term, ad::gather_max_rows(neighbor_term, nbrs.index, nbrs.k)));
}

/// Per-point geometric features F [N, out_dim].
inline ad::Tensor encode(const PointCloud& pc, const nn::LayerParams& params, const EncoderConfig& cfg,
                         const std::string& prefix = "encoder.") {
  pc.validate();
  const auto nbrs = knn(pc.coords, cfg.k);
  std::vector<double> xyz;
  xyz.reserve(pc.size() * 3);
  for (const auto& p : pc.coords) xyz.insert(xyz.end(), p.begin(), p.end());
  auto x = ad::Tensor::from({pc.size(), 3}, std::move(xyz));
  auto p = [&](const std::string& name) { return params.get(prefix + name); };
  auto e = nn::linear(x, p("embed.weight"), p("embed.bias"));
  auto f = edge_conv(e, nbrs, p("edge1.weight"), p("edge1.bias"));
  if (cfg.variant == EncoderVariant::segmentation) f = edge_conv(f, nbrs, p("edge2.weight"), p("edge2.bias"));
  return nn::linear(f, p("out.weight"), p("out.bias"));
}

}  // namespace p2p::geometry
