#pragma once

// Class-token classifier and its cross-entropy loss.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "p2p/autodiff/ops.hpp"
#include "p2p/backbone/vit.hpp"
#include "p2p/errors.hpp"
#include "p2p/nn/layers.hpp"
#include "p2p/nn/params.hpp"
#include "p2p/util/rng.hpp"

namespace p2p::heads {

struct ClassHeadConfig {
  std::size_t embed_dim = 64;
  std::size_t classes = 40;
  std::size_t mlp_hidden = 0;  // 0 -> single linear layer
};

struct ClassPrediction {
  ad::Tensor logits;  // [K]
  std::vector<double> probs;
};

inline std::vector<double> softmax_values(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (auto& v : p) v /= z;
  return p;
}

inline void init_class_head(nn::LayerParams& params, const ClassHeadConfig& cfg, Rng& rng,
                            const std::string& prefix = "cls_head.") {
  if (cfg.classes == 0) throw ConfigError("classifier needs at least one class");
  const auto cls = nn::TuningClass::head;
  if (cfg.mlp_hidden == 0) {
    params.add(prefix + "fc.weight", nn::xavier_uniform({cfg.embed_dim, cfg.classes}, cfg.embed_dim, cfg.classes, rng),
               cls);
    params.add(prefix + "fc.bias", ad::Tensor::zeros({cfg.classes}), cls);
    return;
  }
  const auto h = cfg.mlp_hidden;
  params.add(prefix + "fc1.weight", nn::kaiming_uniform({cfg.embed_dim, h}, cfg.embed_dim, rng), cls);
  params.add(prefix + "fc1.bias", ad::Tensor::zeros({h}), cls);
  params.add(prefix + "fc2.weight", nn::xavier_uniform({h, cfg.classes}, h, cfg.classes, rng), cls);
  params.add(prefix + "fc2.bias", ad::Tensor::zeros({cfg.classes}), cls);
}

/// Logits from the class token. Uses the MLP variant when fc1/fc2 exist.
inline ClassPrediction classify(const backbone::BackboneOutput& out, const nn::LayerParams& params,
                                std::size_t classes, const std::string& prefix = "cls_head.") {
  ad::Tensor logits;
  if (params.contains(prefix + "fc.weight")) {
    const auto& w = params.get(prefix + "fc.weight");
    if (w.dim(1) != classes)
      throw ConfigError("classifier has " + std::to_string(w.dim(1)) + " outputs, expected " +
                        std::to_string(classes));
    logits = nn::linear(out.cls, w, params.get(prefix + "fc.bias"));
  } else {
    const auto& w2 = params.get(prefix + "fc2.weight");
    if (w2.dim(1) != classes)
      throw ConfigError("classifier has " + std::to_string(w2.dim(1)) + " outputs, expected " +
                        std::to_string(classes));
    auto h = ad::relu(nn::linear(out.cls, params.get(prefix + "fc1.weight"), params.get(prefix + "fc1.bias")));
    logits = nn::linear(h, w2, params.get(prefix + "fc2.bias"));
  }
  logits = ad::reshape(logits, {classes});
  return {logits, softmax_values(logits.data())};
}

/// -log softmax(logits)[target].
inline ad::Tensor cross_entropy(const ad::Tensor& logits, std::size_t target) {
  if (logits.rank() != 1) throw ShapeError("cross_entropy: expected [K] logits, got " + ad::to_string(logits.shape()));
  if (target >= logits.dim(0))
    throw InputError("class label " + std::to_string(target) + " outside [0, " + std::to_string(logits.dim(0)) + ")");
  return ad::neg(ad::slice(ad::log_softmax(logits, 0), 0, target, 1));
}

}  // namespace p2p::heads
