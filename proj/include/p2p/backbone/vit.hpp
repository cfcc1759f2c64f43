#pragma once

// Tiny pre-norm Vision Transformer standing in for a pretrained image model.
//
// Parameter naming (prefix "backbone."):
//   patch_embed.{weight,bias}   [p*p*3, C], [C]
//   cls_token [1, C], pos_embed [N_t + 1, C]
//   blocks.<i>.norm1.{weight,bias}, blocks.<i>.attn.qkv.{weight,bias},
//   blocks.<i>.attn.proj.{weight,bias}, blocks.<i>.norm2.{weight,bias},
//   blocks.<i>.mlp.fc1.{weight,bias}, blocks.<i>.mlp.fc2.{weight,bias}
//   norm.{weight,bias}

#include <algorithm>
#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "p2p/autodiff/ops.hpp"
#include "p2p/coloring/coloring.hpp"
#include "p2p/errors.hpp"
#include "p2p/nn/layers.hpp"
#include "p2p/nn/params.hpp"
#include "p2p/pipeline/checkpoint.hpp"
#include "p2p/util/rng.hpp"

namespace p2p::backbone {

inline const std::string kPrefix = "backbone.";

struct BackboneConfig {
  std::size_t image_size = 64;
  std::size_t patch_size = 8;
  std::size_t embed_dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;
  double drop_path = 0.0;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_tokens() const { return grid() * grid(); }
  std::size_t mlp_dim() const { return static_cast<std::size_t>(mlp_ratio * static_cast<double>(embed_dim)); }

  void validate() const {
    if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0)
      throw ConfigError("image size " + std::to_string(image_size) + " is not a multiple of patch size " +
                        std::to_string(patch_size));
    if (heads == 0 || embed_dim % heads != 0)
      throw ConfigError("embed dim " + std::to_string(embed_dim) + " not divisible by " +
                        std::to_string(heads) + " heads");
    if (mlp_dim() == 0) throw ConfigError("mlp ratio yields an empty hidden layer");
    if (drop_path < 0.0 || drop_path >= 1.0) throw ConfigError("drop path rate must be in [0, 1)");
  }
};

struct BackboneOutput {
  ad::Tensor tokens;                      // [N_t, C], class token excluded
  ad::Tensor cls;                         // [1, C]
  std::vector<ad::Tensor> intermediates;  // [N_t, C] per captured block
};

inline std::string block_prefix(std::size_t i) { return kPrefix + "blocks." + std::to_string(i) + "."; }

inline void init_backbone(nn::LayerParams& params, const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto c = cfg.embed_dim;
  const auto other = nn::TuningClass::backbone_other;
  auto add_linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    params.add(name + ".weight", nn::xavier_uniform({in, out}, in, out, rng), other);
    params.add(name + ".bias", ad::Tensor::zeros({out}), other);
  };
  auto add_norm = [&](const std::string& name) {
    params.add(name + ".weight", ad::Tensor::full({c}, 1.0), other);
    params.add(name + ".bias", ad::Tensor::zeros({c}), other);
  };
  auto small_normal = [&](ad::Shape shape) {
    std::vector<double> v(ad::numel(shape));
    for (auto& x : v) x = 0.02 * rng.normal();
    return ad::Tensor::from(std::move(shape), std::move(v));
  };
  const auto p = cfg.patch_size;
  add_linear(kPrefix + "patch_embed", p * p * 3, c);
  params.add(kPrefix + "cls_token", small_normal({1, c}), other);
  params.add(kPrefix + "pos_embed", small_normal({cfg.num_tokens() + 1, c}), other);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const auto b = block_prefix(i);
    add_norm(b + "norm1");
    add_linear(b + "attn.qkv", c, 3 * c);
    add_linear(b + "attn.proj", c, c);
    add_norm(b + "norm2");
    add_linear(b + "mlp.fc1", c, cfg.mlp_dim());
    add_linear(b + "mlp.fc2", cfg.mlp_dim(), c);
  }
  add_norm(kPrefix + "norm");
}

/// Tags every backbone parameter as norm (layernorm affine), bias (other bias
/// vectors) or backbone-other.
inline void partition_tuning_classes(nn::LayerParams& params) {
  auto ends_with = [](std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
  };
  for (auto& [name, p] : params) {
    if (name.rfind(kPrefix, 0) != 0) continue;
    const std::string_view local = std::string_view(name).substr(kPrefix.size());
    if (local == "norm.weight" || local == "norm.bias" || ends_with(local, ".norm1.weight") ||
        ends_with(local, ".norm1.bias") || ends_with(local, ".norm2.weight") || ends_with(local, ".norm2.bias"))
      p.cls = nn::TuningClass::norm;
    else if (ends_with(local, ".bias"))
      p.cls = nn::TuningClass::bias;
    else if (ends_with(local, ".weight") || local == "cls_token" || local == "pos_embed")
      p.cls = nn::TuningClass::backbone_other;
    else
      throw ConfigError("cannot classify backbone parameter '" + name + "'");
  }
}

/// Splits a [H, W, 3] image into flattened patches [N_t, p*p*3].
inline ad::Tensor patchify(const ad::Tensor& img, std::size_t patch) {
  const auto h = img.dim(0), w = img.dim(1), c = img.dim(2);
  if (h % patch || w % patch)
    throw ConfigError("image " + std::to_string(h) + "x" + std::to_string(w) +
                      " is not a multiple of patch size " + std::to_string(patch));
  auto t = ad::reshape(img, {h / patch, patch, w / patch, patch, c});
  t = ad::permute(t, {0, 2, 1, 3, 4});
  return ad::reshape(t, {(h / patch) * (w / patch), patch * patch * c});
}

/// Pre-norm ViT forward. `drop_rng` enables stochastic depth (training only).
/// Block outputs listed in `capture_layers` (0-based) are returned without the
/// class token.
inline BackboneOutput backbone_forward(const coloring::ColorImage& img, const nn::LayerParams& params,
                                       const BackboneConfig& cfg,
                                       std::span<const std::size_t> capture_layers = {},
                                       Rng* drop_rng = nullptr) {
  cfg.validate();
  if (!img.normalized) throw ContractError("backbone_forward: image must be normalized");
  if (img.rgb.rank() != 3 || img.rgb.dim(0) != cfg.image_size || img.rgb.dim(1) != cfg.image_size ||
      img.rgb.dim(2) != 3)
    throw ConfigError("backbone expects a " + std::to_string(cfg.image_size) + "x" +
                      std::to_string(cfg.image_size) + "x3 image, got " + ad::to_string(img.rgb.shape()));
  for (auto l : capture_layers)
    if (l >= cfg.depth)
      throw ConfigError("capture layer " + std::to_string(l) + " >= depth " + std::to_string(cfg.depth));

  auto p = [&](const std::string& name) { return params.get(name); };
  const auto nt = cfg.num_tokens();
  auto x = nn::linear(patchify(img.rgb, cfg.patch_size), p(kPrefix + "patch_embed.weight"),
                      p(kPrefix + "patch_embed.bias"));
  x = ad::concat({p(kPrefix + "cls_token"), x}, 0);
  x = ad::add(x, p(kPrefix + "pos_embed"));

  const bool training = drop_rng != nullptr;
  Rng no_rng(0);
  Rng& rng = drop_rng ? *drop_rng : no_rng;

  BackboneOutput out;
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const auto b = block_prefix(i);
    auto h = nn::layernorm(x, p(b + "norm1.weight"), p(b + "norm1.bias"));
    nn::AttentionParams ap{p(b + "attn.qkv.weight"), p(b + "attn.qkv.bias"), p(b + "attn.proj.weight"),
                           p(b + "attn.proj.bias")};
    x = ad::add(x, nn::drop_path(nn::mhsa(h, ap, cfg.heads), cfg.drop_path, rng, training));
    h = nn::layernorm(x, p(b + "norm2.weight"), p(b + "norm2.bias"));
    h = nn::linear(ad::gelu(nn::linear(h, p(b + "mlp.fc1.weight"), p(b + "mlp.fc1.bias"))),
                   p(b + "mlp.fc2.weight"), p(b + "mlp.fc2.bias"));
    x = ad::add(x, nn::drop_path(h, cfg.drop_path, rng, training));
    if (std::find(capture_layers.begin(), capture_layers.end(), i) != capture_layers.end())
      out.intermediates.push_back(ad::slice(x, 0, 1, nt));
  }
  x = nn::layernorm(x, p(kPrefix + "norm.weight"), p(kPrefix + "norm.bias"));
  out.cls = ad::slice(x, 0, 0, 1);
  out.tokens = ad::slice(x, 0, 1, nt);
  return out;
}

// ---------------------------------------------------------------------------
// Weight files use the checkpoint container with only tensor records.

inline void save_weights(const nn::LayerParams& params, const std::string& path) {
  pipeline::Checkpoint ck;
  for (const auto& [name, p] : params)
    if (name.rfind(kPrefix, 0) == 0)
      ck.tensors.push_back({name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
  pipeline::save_checkpoint(ck, path);
}

/// Strictly loads backbone weights: every backbone parameter must be present
/// with the right shape and nothing else may be in the file. On any error the
/// parameters are left untouched.
inline void load_weights(nn::LayerParams& params, const std::string& path) {
  const auto ck = pipeline::load_checkpoint(path);
  std::set<std::string> expected;
  for (const auto& [name, p] : params)
    if (name.rfind(kPrefix, 0) == 0) expected.insert(name);
  std::vector<std::string> unexpected, mismatched;
  std::set<std::string> found;
  for (const auto& rec : ck.tensors) {
    if (!expected.count(rec.name)) {
      unexpected.push_back(rec.name);
      continue;
    }
    found.insert(rec.name);
    if (rec.shape != params.get(rec.name).shape())
      mismatched.push_back(rec.name + " " + ad::to_string(rec.shape) + " vs " +
                           ad::to_string(params.get(rec.name).shape()));
  }
  std::vector<std::string> missing;
  for (const auto& n : expected)
    if (!found.count(n)) missing.push_back(n);
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
    return s;
  };
  std::string err;
  if (!unexpected.empty()) err += "unexpected tensors: " + join(unexpected) + "; ";
  if (!missing.empty()) err += "missing tensors: " + join(missing) + "; ";
  if (!mismatched.empty()) err += "shape mismatch: " + join(mismatched) + "; ";
  if (!err.empty()) throw FormatError("weight file '" + path + "': " + err);
  for (const auto& rec : ck.tensors) params.assign(rec.name, rec.data);
}

}  // namespace p2p::backbone
