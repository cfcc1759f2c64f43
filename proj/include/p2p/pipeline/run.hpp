#pragma once

// Whole runs: dataset -> training epochs -> checkpoint -> test evaluation.

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "p2p/data/dataset.hpp"
#include "p2p/errors.hpp"
#include "p2p/heads/segment.hpp"
#include "p2p/pipeline/checkpoint.hpp"
#include "p2p/pipeline/config.hpp"
#include "p2p/pipeline/evaluate.hpp"
#include "p2p/pipeline/model.hpp"
#include "p2p/pipeline/train.hpp"
#include "p2p/projection/rotation.hpp"

namespace p2p::pipeline {

inline heads::VoteMode vote_mode(const RunConfig& cfg) {
  return cfg.vote == "count" ? heads::VoteMode::count : heads::VoteMode::sum;
}

inline std::vector<projection::ViewAngles> test_grid(const RunConfig& cfg) {
  return projection::test_view_grid(cfg.test_theta, cfg.test_phi, cfg.phi_lo, cfg.phi_hi);
}

/// Model sized for a dataset: class count from the class names, part count
/// from the part table.
inline TrainState make_state(const RunConfig& cfg, const data::Dataset& train) {
  return TrainState(cfg, train.class_names.size(), train.num_parts());
}

/// Adds the evaluation metrics of one split under `split`.
inline void log_eval(MetricsLog& log, std::uint64_t epoch, const std::string& split, Task task, const EvalResult& r) {
  if (task == Task::classification) {
    log.add(epoch, split, "voted_accuracy", r.voted_accuracy);
    log.add(epoch, split, "best_view_accuracy", r.best_view_accuracy());
    log.add(epoch, split, "mean_view_accuracy", r.mean_view_accuracy());
  } else {
    log.add(epoch, split, "instance_miou", r.instance_miou);
    log.add(epoch, split, "category_miou", r.category_miou);
    log.add(epoch, split, "best_view_miou", r.best_view_miou());
    log.add(epoch, split, "mean_view_miou", r.mean_view_miou());
  }
}

struct RunOptions {
  std::optional<std::string> resume;  // checkpoint to continue from
  bool eval_train = false;            // also evaluate the training split at the end
  bool eval_test = true;
  std::function<void(const EpochStats&)> on_epoch;
};

struct RunResult {
  TrainState state;
  MetricsLog metrics;
  std::vector<EpochStats> history;
  std::optional<EvalResult> train_eval;
  std::optional<EvalResult> test_eval;
};

/// Trains to `cfg.epochs` (continuing from a checkpoint if asked), writes the
/// checkpoint and metrics files named in the config, and evaluates on the
/// configured view grid.
inline RunResult run(const RunConfig& cfg, const data::DatasetPair& ds, const RunOptions& opt = {}) {
  cfg.validate();
  RunResult r{make_state(cfg, ds.train), {}, {}, {}, {}};
  auto& st = r.state;
  if (opt.resume) load_state(st, *opt.resume);
  if (st.epoch > cfg.epochs) throw ConfigError("checkpoint is past the configured epoch count");
  while (st.epoch < cfg.epochs) {
    const auto stats = train_epoch(st, ds.train);
    r.history.push_back(stats);
    r.metrics.add(stats.epoch, "train", "lr", stats.lr);
    r.metrics.add(stats.epoch, "train", "loss", stats.loss);
    if (cfg.task == Task::classification) r.metrics.add(stats.epoch, "train", "accuracy", stats.accuracy);
    if (opt.on_epoch) opt.on_epoch(stats);
    if (!cfg.checkpoint.empty() && cfg.checkpoint_every > 0 && stats.epoch % cfg.checkpoint_every == 0)
      save_state(st, cfg.checkpoint);
  }
  if (!cfg.checkpoint.empty()) save_state(st, cfg.checkpoint);
  const auto grid = test_grid(cfg);
  if (opt.eval_train) {
    r.train_eval = evaluate(st.model, ds.train, grid, vote_mode(cfg));
    log_eval(r.metrics, st.epoch, "train", cfg.task, *r.train_eval);
  }
  if (opt.eval_test) {
    r.test_eval = evaluate(st.model, ds.test, grid, vote_mode(cfg));
    log_eval(r.metrics, st.epoch, "test", cfg.task, *r.test_eval);
  }
  if (!cfg.metrics.empty()) r.metrics.write(cfg.metrics);
  return r;
}

/// Rebuilds the run configuration, dataset and weights stored in a checkpoint.
struct Restored {
  RunConfig config;
  data::DatasetPair data;
  TrainState state;
};

inline Restored restore_run(const std::string& ckpt_path) {
  const auto ck = load_checkpoint(ckpt_path);
  auto cfg = parse_config(ck.config_text);
  auto ds = load_dataset(cfg);
  auto st = make_state(cfg, ds.train);
  restore_state(st, ck);
  return {std::move(cfg), std::move(ds), std::move(st)};
}

}  // namespace p2p::pipeline
