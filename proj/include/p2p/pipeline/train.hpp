#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "p2p/autodiff/ops.hpp"
#include "p2p/data/augment.hpp"
#include "p2p/data/dataset.hpp"
#include "p2p/errors.hpp"
#include "p2p/heads/segment.hpp"
#include "p2p/nn/optim.hpp"
#include "p2p/pipeline/checkpoint.hpp"
#include "p2p/pipeline/config.hpp"
#include "p2p/pipeline/model.hpp"
#include "p2p/projection/rotation.hpp"
#include "p2p/util/rng.hpp"

namespace p2p::pipeline {

struct TrainState {
  RunConfig config;
  Model model;
  nn::AdamW optimizer;
  std::uint64_t epoch = 0;  // epochs completed

  TrainState(RunConfig cfg, std::size_t classes, std::size_t parts)
      : config(std::move(cfg)), model(build_model(config, classes, parts)), optimizer(config.optimizer) {}
};

struct EpochStats {
  std::uint64_t epoch = 0;  // 1-based index of the epoch just finished
  double lr = 0.0;
  double loss = 0.0;      // mean per-sample loss
  double accuracy = 0.0;  // classification: fraction of correct training views
};

/// The training-time input for one sample in one epoch: augmented cloud and a
/// random view, drawn from a stream that depends only on (seed, epoch, sample).
struct SampleDraw {
  geometry::PointCloud cloud;
  projection::ViewAngles view;
  Rng rng;
};

inline SampleDraw draw_sample(const RunConfig& cfg, std::uint64_t epoch, std::size_t index,
                              const geometry::PointCloud& cloud) {
  SampleDraw d{cloud, {}, Rng::derive(cfg.seed, {kSampleStream, epoch, index})};
  if (cfg.augment) d.cloud = data::augment(cloud, cfg.augmentation, d.rng);
  d.view = projection::sample_train_view(d.rng, cfg.phi_lo, cfg.phi_hi);
  return d;
}

/// Loss of one sample (one random view) with the gradient of loss*weight
/// accumulated into the trainable parameters. Returns the unweighted loss and
/// whether the class prediction was right (classification only).
inline std::pair<double, bool> accumulate_sample(TrainState& st, const data::Sample& sample, std::size_t index,
                                                 double weight) {
  auto d = draw_sample(st.config, st.epoch, index, sample.cloud);
  const auto& m = st.model;
  auto feats = geometry::encode(d.cloud, m.params, m.encoder);
  Rng* drop = st.config.backbone.drop_path > 0.0 ? &d.rng : nullptr;
  auto vf = forward_view(m, feats, d.cloud.coords, d.view, drop);
  data::Sample augmented{d.cloud, sample.label};
  auto loss = view_loss(m, vf, augmented);
  const double value = loss.item();
  bool correct = false;
  if (m.task == Task::classification) correct = heads::argmax(vf.logits.data()) == sample.label;
  if (std::isfinite(value)) ad::backward(ad::scale(loss, weight));
  return {value, correct};
}

/// One pass over the training set in a seeded shuffled order, one optimizer
/// step per batch.
inline EpochStats train_epoch(TrainState& st, const data::Dataset& train) {
  if (train.empty()) throw InputError("training set is empty");
  const auto& cfg = st.config;
  const double lr = nn::cosine_lr(static_cast<double>(st.epoch), static_cast<double>(cfg.epochs), cfg.optimizer.lr);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle = Rng::derive(cfg.seed, {kShuffleStream, st.epoch});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.index(i)]);

  EpochStats stats;
  stats.lr = lr;
  std::size_t correct = 0;
  for (std::size_t start = 0, step = 0; start < order.size(); start += cfg.batch_size, ++step) {
    const auto end = std::min(order.size(), start + cfg.batch_size);
    st.model.params.zero_grad();
    const double weight = 1.0 / static_cast<double>(end - start);
    for (std::size_t b = start; b < end; ++b) {
      const auto idx = order[b];
      auto [loss, ok] = accumulate_sample(st, train.samples[idx], idx, weight);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite loss on sample '" << train.samples[idx].cloud.id << "' at epoch " << st.epoch + 1
            << ", step " << step << ", lr " << lr;
        throw NumericalError(msg.str());
      }
      stats.loss += loss;
      correct += ok ? 1 : 0;
    }
    st.optimizer.step(st.model.params, cfg.policy, lr);
  }
  st.model.params.zero_grad();
  ++st.epoch;
  stats.epoch = st.epoch;
  stats.loss /= static_cast<double>(train.size());
  stats.accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
  return stats;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline Checkpoint make_checkpoint(const TrainState& st) {
  Checkpoint ck;
  ck.config_text = format_config(st.config);
  ck.epoch = st.epoch;
  ck.rng_seed = st.config.seed;
  ck.rng_epoch = st.epoch;
  ck.optimizer_steps = st.optimizer.steps();
  for (const auto& [name, p] : st.model.params)
    ck.tensors.push_back({name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
  for (const auto& [name, mom] : st.optimizer.state()) {
    ck.optimizer_state.push_back({name + "#m", {mom.m.size()}, mom.m});
    ck.optimizer_state.push_back({name + "#v", {mom.v.size()}, mom.v});
  }
  return ck;
}

inline void save_state(const TrainState& st, const std::string& path) { save_checkpoint(make_checkpoint(st), path); }

/// Restores parameters, optimizer moments and the epoch counter. Every model
/// tensor must be present with its exact shape.
inline void restore_state(TrainState& st, const Checkpoint& ck) {
  if (ck.rng_seed != st.config.seed)
    throw ConfigError("checkpoint was written with seed " + std::to_string(ck.rng_seed) + ", config has " +
                      std::to_string(st.config.seed));
  std::set<std::string> seen;
  for (const auto& rec : ck.tensors) {
    if (!st.model.params.contains(rec.name)) throw FormatError("checkpoint has unknown tensor '" + rec.name + "'");
    if (st.model.params.get(rec.name).shape() != rec.shape)
      throw FormatError("checkpoint tensor '" + rec.name + "' has shape " + ad::to_string(rec.shape) + ", model has " +
                        ad::to_string(st.model.params.get(rec.name).shape()));
    seen.insert(rec.name);
  }
  for (const auto& [name, p] : st.model.params)
    if (!seen.count(name)) throw FormatError("checkpoint is missing tensor '" + name + "'");
  std::map<std::string, nn::AdamW::Moments> moments;
  for (const auto& rec : ck.optimizer_state) {
    const auto hash = rec.name.rfind('#');
    if (hash == std::string::npos) throw FormatError("bad optimizer record '" + rec.name + "'");
    const auto name = rec.name.substr(0, hash), which = rec.name.substr(hash + 1);
    if (!st.model.params.contains(name) || st.model.params.get(name).numel() != rec.data.size())
      throw FormatError("optimizer record '" + rec.name + "' does not match the model");
    if (which == "m") moments[name].m = rec.data;
    else if (which == "v") moments[name].v = rec.data;
    else throw FormatError("bad optimizer record '" + rec.name + "'");
  }
  for (const auto& rec : ck.tensors) st.model.params.assign(rec.name, rec.data);
  st.optimizer.state() = std::move(moments);
  st.optimizer.set_steps(ck.optimizer_steps);
  st.epoch = ck.epoch;
}

inline void load_state(TrainState& st, const std::string& path) { restore_state(st, load_checkpoint(path)); }

// ---------------------------------------------------------------------------
// Metrics: one "epoch split metric value" record per line.

class MetricsLog {
 public:
  void add(std::uint64_t epoch, const std::string& split, const std::string& metric, double value) {
    lines_ += std::to_string(epoch) + " " + split + " " + metric + " " + detail::format_double(value) + "\n";
  }
  const std::string& text() const { return lines_; }
  void write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << lines_;
  }

 private:
  std::string lines_;
};

}  // namespace p2p::pipeline
