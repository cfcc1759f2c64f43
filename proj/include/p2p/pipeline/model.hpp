#pragma once

// The assembled model: geometry encoder -> projection -> coloring ->
// normalization -> image backbone -> task head.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "p2p/autodiff/ops.hpp"
#include "p2p/backbone/vit.hpp"
#include "p2p/coloring/coloring.hpp"
#include "p2p/data/dataset.hpp"
#include "p2p/geometry/encoder.hpp"
#include "p2p/heads/classify.hpp"
#include "p2p/heads/segment.hpp"
#include "p2p/nn/params.hpp"
#include "p2p/pipeline/config.hpp"
#include "p2p/projection/project.hpp"
#include "p2p/util/rng.hpp"

namespace p2p::pipeline {

// Purpose tags for derived random streams.
inline constexpr std::uint64_t kInitStream = 0x696e6974;    // parameter initialisation
inline constexpr std::uint64_t kShuffleStream = 0x73687566; // epoch sample order
inline constexpr std::uint64_t kSampleStream = 0x73616d70;  // per-sample augmentation, view, drop path

struct Model {
  Task task = Task::classification;
  std::size_t classes = 0;
  std::size_t parts = 0;
  geometry::EncoderConfig encoder;
  backbone::BackboneConfig backbone;
  std::size_t margin = 0;
  std::vector<std::size_t> capture;
  nn::LayerParams params;

  std::size_t image_size() const { return backbone.image_size; }
};

inline Model build_model(const RunConfig& cfg, std::size_t classes, std::size_t parts) {
  cfg.validate();
  Model m;
  m.task = cfg.task;
  m.classes = classes;
  m.parts = parts;
  m.encoder.variant = cfg.task == Task::classification ? geometry::EncoderVariant::classification
                                                       : geometry::EncoderVariant::segmentation;
  m.encoder.k = cfg.neighbors;
  m.backbone = cfg.backbone;
  m.margin = cfg.effective_margin();
  Rng rng = Rng::derive(cfg.seed, {kInitStream});
  geometry::init_encoder(m.params, m.encoder, rng);
  coloring::init_coloring(m.params, m.encoder.out_dim, rng);
  backbone::init_backbone(m.params, m.backbone, rng);
  backbone::partition_tuning_classes(m.params);
  if (cfg.task == Task::classification) {
    if (classes == 0) throw ConfigError("classification needs at least one class");
    heads::init_class_head(m.params, {m.backbone.embed_dim, classes, cfg.head_hidden}, rng);
  } else {
    if (parts == 0) throw ConfigError("segmentation needs at least one part label");
    m.capture = heads::default_capture_layers(m.backbone.depth);
    heads::init_seg_head(m.params, {m.backbone.embed_dim, parts, cfg.seg_dim}, rng);
  }
  m.params.apply(cfg.policy);
  return m;
}

struct ViewForward {
  projection::FeatureImage features;
  coloring::ColorImage image;  // [0, 1] colours, before normalization
  ad::Tensor logits;           // [K] or [H, W, K]
};

/// Runs everything after the encoder for one view. `drop_rng` switches on
/// stochastic depth in the backbone.
inline ViewForward forward_view(const Model& m, const ad::Tensor& point_features,
                                const std::vector<geometry::Vec3>& coords, const projection::ViewAngles& view,
                                Rng* drop_rng = nullptr) {
  ViewForward out;
  const auto s = m.image_size();
  out.features = projection::project(point_features, coords, view, s, s, m.margin);
  out.image = coloring::colorize(out.features, m.params);
  auto bo = backbone::backbone_forward(coloring::normalize_for_backbone(out.image), m.params, m.backbone, m.capture,
                                       drop_rng);
  if (m.task == Task::classification)
    out.logits = heads::classify(bo, m.params, m.classes).logits;
  else
    out.logits = heads::seg_head(bo, m.params, m.backbone).logits;
  return out;
}

/// Task loss for one view of one sample.
inline ad::Tensor view_loss(const Model& m, const ViewForward& vf, const data::Sample& sample) {
  if (m.task == Task::classification) return heads::cross_entropy(vf.logits, sample.label);
  if (!sample.cloud.has_labels()) throw InputError("segmentation sample '" + sample.cloud.id + "' has no part labels");
  return heads::multilabel_ce(vf.logits,
                              projection::labels_from_binning(sample.cloud.labels, vf.features.binning, m.parts));
}

// ---------------------------------------------------------------------------
// Dataset from the run configuration.
//
//   synthetic:<kind>,<kind>,...   procedural shapes, one class per kind
//   dir:<path>                    <path>/<class>/{train,test}/*.off

inline data::DatasetPair load_dataset(const RunConfig& cfg) {
  const std::string_view spec = cfg.dataset;
  if (spec.rfind("synthetic:", 0) == 0) {
    std::vector<data::ShapeKind> kinds;
    auto rest = spec.substr(10);
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      kinds.push_back(data::parse_shape_kind(rest.substr(0, comma)));
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    return data::make_synthetic_dataset(kinds, cfg.train_per_class, cfg.test_per_class, cfg.n_points, cfg.seed);
  }
  if (spec.rfind("dir:", 0) == 0) return data::load_mesh_directory(std::string(spec.substr(4)), cfg.n_points, cfg.seed);
  throw ConfigError("dataset must be 'synthetic:<kinds>' or 'dir:<path>', got '" + cfg.dataset + "'");
}

}  // namespace p2p::pipeline
