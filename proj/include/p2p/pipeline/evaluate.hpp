#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "p2p/autodiff/tensor.hpp"
#include "p2p/data/dataset.hpp"
#include "p2p/errors.hpp"
#include "p2p/heads/classify.hpp"
#include "p2p/heads/segment.hpp"
#include "p2p/nn/params.hpp"
#include "p2p/pipeline/model.hpp"
#include "p2p/projection/rotation.hpp"

namespace p2p::pipeline {

struct EvalResult {
  std::size_t samples = 0;
  std::size_t views = 0;
  // Classification
  double voted_accuracy = 0.0;
  std::vector<double> view_accuracy;  // per grid view, single-view accuracy
  // Segmentation
  double instance_miou = 0.0;  // fused over all views
  double category_miou = 0.0;
  std::vector<double> view_instance_miou;  // per grid view, that view alone

  double best_view_accuracy() const {
    return view_accuracy.empty() ? 0.0 : *std::max_element(view_accuracy.begin(), view_accuracy.end());
  }
  double mean_view_accuracy() const { return mean(view_accuracy); }
  double best_view_miou() const {
    return view_instance_miou.empty() ? 0.0 : *std::max_element(view_instance_miou.begin(), view_instance_miou.end());
  }
  double mean_view_miou() const { return mean(view_instance_miou); }

 private:
  static double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  }
};

/// Mean IoU over `parts` for one shape. A part absent from both prediction and
/// ground truth scores 1.
inline double shape_iou(const std::vector<int>& pred, const std::vector<int>& truth, const std::vector<int>& parts) {
  if (pred.size() != truth.size()) throw ContractError("shape_iou: prediction and truth differ in length");
  if (parts.empty()) throw ContractError("shape_iou: no parts");
  double total = 0.0;
  for (int p : parts) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool a = pred[i] == p, b = truth[i] == p;
      inter += (a && b) ? 1 : 0;
      uni += (a || b) ? 1 : 0;
    }
    total += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  return total / static_cast<double>(parts.size());
}

/// Instance mean (over shapes) and category mean (over classes of the
/// per-class shape means) of shape IoUs.
inline std::pair<double, double> miou(const std::vector<double>& shape_ious, const std::vector<std::size_t>& labels) {
  std::map<std::size_t, std::pair<double, std::size_t>> per_class;
  double inst = 0.0;
  for (std::size_t i = 0; i < shape_ious.size(); ++i) {
    inst += shape_ious[i];
    auto& [s, n] = per_class[labels[i]];
    s += shape_ious[i];
    ++n;
  }
  double cat = 0.0;
  for (const auto& [c, sn] : per_class) cat += sn.first / static_cast<double>(sn.second);
  return {inst / static_cast<double>(shape_ious.size()), cat / static_cast<double>(per_class.size())};
}

/// Evaluates over a fixed view grid. The encoder runs once per sample; views
/// are processed and fused in grid order, so the result is a pure function of
/// (weights, dataset, grid).
inline EvalResult evaluate(const Model& m, const data::Dataset& ds, const std::vector<projection::ViewAngles>& grid,
                           heads::VoteMode vote = heads::VoteMode::sum) {
  if (ds.empty()) throw InputError("evaluate: empty dataset");
  if (grid.empty()) throw ConfigError("evaluate: empty view grid");
  ad::NoGradGuard no_grad;
  EvalResult r;
  r.samples = ds.size();
  r.views = grid.size();
  std::size_t voted_correct = 0;
  std::vector<std::size_t> view_correct(grid.size(), 0);
  std::vector<double> fused_ious;
  std::vector<std::vector<double>> view_ious(grid.size());
  std::vector<std::size_t> labels;
  for (const auto& sample : ds.samples) {
    auto feats = geometry::encode(sample.cloud, m.params, m.encoder);
    if (m.task == Task::classification) {
      std::vector<std::vector<double>> probs;
      for (std::size_t v = 0; v < grid.size(); ++v) {
        auto vf = forward_view(m, feats, sample.cloud.coords, grid[v]);
        probs.push_back(heads::softmax_values(vf.logits.data()));
        view_correct[v] += heads::argmax(probs.back()) == sample.label ? 1 : 0;
      }
      voted_correct += heads::vote_classify(probs, vote) == sample.label ? 1 : 0;
    } else {
      if (!sample.cloud.has_labels()) throw InputError("segmentation sample '" + sample.cloud.id + "' has no labels");
      if (sample.label >= ds.class_parts.size()) throw InputError("sample class outside the dataset's part table");
      const auto& parts = ds.class_parts[sample.label];
      std::vector<projection::PixelBinning> binnings(grid.size());
      std::vector<heads::SegView> views(grid.size());
      for (std::size_t v = 0; v < grid.size(); ++v) {
        auto vf = forward_view(m, feats, sample.cloud.coords, grid[v]);
        binnings[v] = std::move(vf.features.binning);
        views[v].probs = heads::pixel_softmax(vf.logits);
      }
      for (std::size_t v = 0; v < grid.size(); ++v) views[v].binning = &binnings[v];
      for (std::size_t v = 0; v < grid.size(); ++v) {
        auto single = heads::fuse_seg_views({views[v]}, sample.cloud.size(), m.parts);
        view_ious[v].push_back(shape_iou(single.labels, sample.cloud.labels, parts));
      }
      auto fused = heads::fuse_seg_views(views, sample.cloud.size(), m.parts);
      fused_ious.push_back(shape_iou(fused.labels, sample.cloud.labels, parts));
      labels.push_back(sample.label);
    }
  }
  const auto n = static_cast<double>(ds.size());
  if (m.task == Task::classification) {
    r.voted_accuracy = static_cast<double>(voted_correct) / n;
    for (auto c : view_correct) r.view_accuracy.push_back(static_cast<double>(c) / n);
  } else {
    std::tie(r.instance_miou, r.category_miou) = miou(fused_ious, labels);
    for (const auto& v : view_ious) r.view_instance_miou.push_back(miou(v, labels).first);
  }
  return r;
}

}  // namespace p2p::pipeline
