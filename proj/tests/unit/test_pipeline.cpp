#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include "helpers.hpp"
#include "p2p/p2p.hpp"
#include "p2p/pipeline/run.hpp"

namespace {

using namespace p2p;
using p2p::testing::TempDir;

// Small enough that an epoch takes well under a second.
pipeline::RunConfig tiny_config(pipeline::Task task = pipeline::Task::classification) {
  pipeline::RunConfig c;
  c.task = task;
  c.backbone.image_size = 32;
  c.backbone.patch_size = 8;
  c.backbone.embed_dim = 16;
  c.backbone.depth = 4;
  c.backbone.heads = 2;
  c.epochs = 3;
  c.batch_size = 4;
  c.n_points = 96;
  c.neighbors = 8;
  c.test_theta = 2;
  c.test_phi = 2;
  c.dataset = "synthetic:sphere,cube";
  c.train_per_class = 3;
  c.test_per_class = 2;
  c.seg_dim = 8;
  c.seed = 11;
  return c;
}

bool params_equal(const nn::LayerParams& a, const nn::LayerParams& b) {
  for (const auto& [name, p] : a) {
    const auto x = p.tensor.data(), y = b.get(name).data();
    if (!std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
  }
  return a.size() == b.size();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// --- config ----------------------------------------------------------------

TEST(Config, FormatParseRoundTrip) {
  auto c = tiny_config(pipeline::Task::segmentation);
  c.optimizer.lr = 1.0 / 3.0;
  c.phi_lo = -0.123456789012345678;
  c.policy = nn::TuningPolicy::bias;
  c.margin = 3;
  c.augment = false;
  c.checkpoint = "run/ck.p2p";
  const auto back = pipeline::parse_config(pipeline::format_config(c));
  EXPECT_EQ(pipeline::format_config(back), pipeline::format_config(c));
  EXPECT_EQ(back.optimizer.lr, c.optimizer.lr);
  EXPECT_EQ(back.phi_lo, c.phi_lo);
}

TEST(Config, CommentsBlankLinesAndDefaults) {
  const auto c = pipeline::parse_config("# a run\n\n  epochs = 7   # short\nlr=0.001\n");
  EXPECT_EQ(c.epochs, 7u);
  EXPECT_DOUBLE_EQ(c.optimizer.lr, 0.001);
  EXPECT_EQ(c.batch_size, pipeline::RunConfig{}.batch_size);
  EXPECT_EQ(c.backbone.image_size, 64u);
  EXPECT_EQ(c.policy, nn::TuningPolicy::norm);
}

TEST(Config, ErrorsNameTheLine) {
  auto message = [](const std::string& text) {
    try {
      pipeline::parse_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message("epochs = 3\nbogus = 1\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("epochs = 3\nepochs = 4\n").find("twice"), std::string::npos);
  EXPECT_NE(message("epochs = three\n").find("line 1"), std::string::npos);
  EXPECT_NE(message("just words\n").find("key = value"), std::string::npos);
  EXPECT_NE(message("policy = sometimes\n"), "");
  EXPECT_NE(message("task = regression\n"), "");
  EXPECT_THROW(pipeline::load_config("/nonexistent/p2p.cfg"), ConfigError);
}

TEST(Config, ValidationRejectsInconsistentRuns) {
  auto bad = [](auto mutate) {
    auto c = tiny_config();
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  bad([](auto& c) { c.neighbors = 500; });
  bad([](auto& c) { c.margin = 16; });
  bad([](auto& c) { c.vote = "majority"; });
  bad([](auto& c) { c.batch_size = 0; });
  bad([](auto& c) { c.optimizer.lr = 0.0; });
  bad([](auto& c) { c.phi_lo = 1.0, c.phi_hi = 0.0; });
  bad([](auto& c) { c.backbone.patch_size = 7; });
  EXPECT_NO_THROW(tiny_config().validate());
}

// --- checkpoints -----------------------------------------------------------

pipeline::Checkpoint sample_checkpoint() {
  pipeline::Checkpoint ck;
  ck.config_text = pipeline::format_config(tiny_config());
  ck.epoch = 4;
  ck.rng_seed = 11;
  ck.rng_epoch = 4;
  ck.optimizer_steps = 12;
  ck.tensors.push_back({"a.weight", {2, 3}, {1, -2, 3.5, 1e-300, -0.0, std::numeric_limits<double>::denorm_min()}});
  ck.tensors.push_back({"b", {1}, {42}});
  ck.optimizer_state.push_back({"a.weight#m", {6}, {0, 0, 0, 0, 0, 1}});
  return ck;
}

TEST(Checkpoint, SerializeRoundTripIsByteIdentical) {
  const auto ck = sample_checkpoint();
  const auto bytes = pipeline::serialize(ck);
  const auto back = pipeline::deserialize(bytes);
  EXPECT_EQ(back, ck);
  EXPECT_EQ(pipeline::serialize(back), bytes);
}

TEST(Checkpoint, CorruptFilesAreFormatErrors) {
  const auto bytes = pipeline::serialize(sample_checkpoint());
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1})
    EXPECT_THROW(pipeline::deserialize(std::span(bytes).first(cut)), FormatError) << cut;
  auto version = bytes;
  version[4] = 9;
  EXPECT_THROW(pipeline::deserialize(version), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(pipeline::deserialize(trailing), FormatError);
  EXPECT_THROW(pipeline::load_checkpoint("/nonexistent/ck.p2p"), IoError);
}

TEST(Checkpoint, TrainStateSaveLoadSaveIsByteIdentical) {
  TempDir dir("state_rt");
  const auto cfg = tiny_config();
  const auto ds = pipeline::load_dataset(cfg);
  auto st = pipeline::make_state(cfg, ds.train);
  pipeline::train_epoch(st, ds.train);
  pipeline::save_state(st, dir.file("a.p2p"));
  auto st2 = pipeline::make_state(cfg, ds.train);
  pipeline::load_state(st2, dir.file("a.p2p"));
  pipeline::save_state(st2, dir.file("b.p2p"));
  EXPECT_EQ(slurp(dir.file("a.p2p")), slurp(dir.file("b.p2p")));
  EXPECT_TRUE(params_equal(st.model.params, st2.model.params));
  EXPECT_EQ(st2.epoch, 1u);
}

TEST(Checkpoint, RestoreRejectsMismatchedModels) {
  TempDir dir("state_bad");
  const auto cfg = tiny_config();
  const auto ds = pipeline::load_dataset(cfg);
  pipeline::save_state(pipeline::make_state(cfg, ds.train), dir.file("a.p2p"));

  auto other_seed = cfg;
  other_seed.seed = 12;
  auto st = pipeline::make_state(other_seed, ds.train);
  EXPECT_THROW(pipeline::load_state(st, dir.file("a.p2p")), ConfigError);

  auto wider = cfg;
  wider.backbone.embed_dim = 32;
  auto st2 = pipeline::make_state(wider, ds.train);
  EXPECT_THROW(pipeline::load_state(st2, dir.file("a.p2p")), FormatError);
}

// --- training --------------------------------------------------------------

TEST(Train, NormPolicyMovesLayerNormFrozenPolicyDoesNot) {
  const auto ds = pipeline::load_dataset(tiny_config());
  auto run_one = [&](nn::TuningPolicy policy) {
    auto cfg = tiny_config();
    cfg.policy = policy;
    auto st = pipeline::make_state(cfg, ds.train);
    const auto init = pipeline::make_state(cfg, ds.train);
    pipeline::train_epoch(st, ds.train);
    std::set<nn::TuningClass> changed;
    for (const auto& [name, p] : st.model.params) {
      const auto x = p.tensor.data(), y = init.model.params.get(name).data();
      if (!std::equal(x.begin(), x.end(), y.begin())) changed.insert(p.cls);
    }
    return changed;
  };
  using C = nn::TuningClass;
  EXPECT_EQ(run_one(nn::TuningPolicy::norm), (std::set<C>{C::prompt, C::head, C::norm}));
  EXPECT_EQ(run_one(nn::TuningPolicy::frozen), (std::set<C>{C::prompt, C::head}));
  EXPECT_EQ(run_one(nn::TuningPolicy::full), (std::set<C>{C::prompt, C::head, C::norm, C::bias, C::backbone_other}));
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  TempDir dir("resume");
  for (auto task : {pipeline::Task::classification, pipeline::Task::segmentation}) {
    auto cfg = tiny_config(task);
    cfg.epochs = 2;
    cfg.backbone.drop_path = 0.1;  // exercises the per-sample stochastic stream
    const auto ds = pipeline::load_dataset(cfg);

    auto straight = pipeline::make_state(cfg, ds.train);
    pipeline::train_epoch(straight, ds.train);
    const auto s2 = pipeline::train_epoch(straight, ds.train);

    auto first = pipeline::make_state(cfg, ds.train);
    pipeline::train_epoch(first, ds.train);
    pipeline::save_state(first, dir.file("mid.p2p"));
    auto resumed = pipeline::make_state(cfg, ds.train);
    pipeline::load_state(resumed, dir.file("mid.p2p"));
    const auto r2 = pipeline::train_epoch(resumed, ds.train);

    EXPECT_TRUE(params_equal(straight.model.params, resumed.model.params)) << pipeline::to_string(task);
    EXPECT_EQ(s2.loss, r2.loss);
    EXPECT_EQ(straight.optimizer.steps(), resumed.optimizer.steps());
  }
}

TEST(Train, NonFiniteLossAborts) {
  const auto cfg = tiny_config();
  const auto ds = pipeline::load_dataset(cfg);
  auto st = pipeline::make_state(cfg, ds.train);
  st.model.params.get("cls_head.fc.bias").mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    pipeline::train_epoch(st, ds.train);
    FAIL() << "expected a numerical abort";
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("lr"), std::string::npos) << msg;
  }
}

TEST(Train, RunWritesIdenticalMetricsForIdenticalConfigs) {
  TempDir dir("metrics");
  auto cfg = tiny_config();
  cfg.epochs = 2;
  const auto ds = pipeline::load_dataset(cfg);
  cfg.metrics = dir.file("m1.txt");
  cfg.checkpoint = dir.file("c1.p2p");
  const auto a = pipeline::run(cfg, ds);
  cfg.metrics = dir.file("m2.txt");
  cfg.checkpoint = dir.file("c2.p2p");
  pipeline::run(cfg, ds);
  const auto m1 = slurp(dir.file("m1.txt"));
  EXPECT_FALSE(m1.empty());
  EXPECT_EQ(m1, slurp(dir.file("m2.txt")));
  EXPECT_NE(m1.find("2 test voted_accuracy"), std::string::npos) << m1;
  ASSERT_TRUE(a.test_eval);
  EXPECT_EQ(a.test_eval->views, 4u);

  // Restoring from the checkpoint reproduces the evaluation.
  const auto restored = pipeline::restore_run(dir.file("c1.p2p"));
  const auto again = pipeline::evaluate(restored.state.model, restored.data.test, pipeline::test_grid(restored.config));
  EXPECT_EQ(again.voted_accuracy, a.test_eval->voted_accuracy);
  EXPECT_EQ(again.view_accuracy, a.test_eval->view_accuracy);
}

TEST(Train, ResumedRunMatchesUninterruptedMetrics) {
  TempDir dir("resume_run");
  auto cfg = tiny_config();
  cfg.epochs = 2;
  const auto ds = pipeline::load_dataset(cfg);
  cfg.checkpoint = dir.file("full.p2p");
  const auto full = pipeline::run(cfg, ds);

  auto half = cfg;
  half.epochs = 1;
  half.checkpoint = dir.file("half.p2p");
  pipeline::run(half, ds, {.resume = {}, .eval_train = false, .eval_test = false, .on_epoch = {}});
  // The second leg continues the same schedule, so it is the full config.
  auto second = cfg;
  second.checkpoint = dir.file("resumed.p2p");
  pipeline::RunOptions opt;
  opt.resume = dir.file("half.p2p");
  const auto resumed = pipeline::run(second, ds, opt);
  EXPECT_EQ(full.state.epoch, resumed.state.epoch);
  EXPECT_EQ(full.state.optimizer.steps(), resumed.state.optimizer.steps());
  EXPECT_TRUE(params_equal(full.state.model.params, resumed.state.model.params));
  EXPECT_EQ(full.test_eval->voted_accuracy, resumed.test_eval->voted_accuracy);
}

// --- evaluation ------------------------------------------------------------

TEST(Evaluate, ShapeIouHandExamples) {
  EXPECT_DOUBLE_EQ(pipeline::shape_iou({0, 0, 1, 1}, {0, 0, 1, 1}, {0, 1}), 1.0);
  // part 0: inter 1, union 2; part 1: inter 2, union 3
  EXPECT_DOUBLE_EQ(pipeline::shape_iou({0, 1, 1, 1}, {0, 0, 1, 1}, {0, 1}), (0.5 + 2.0 / 3.0) / 2.0);
  // part 2 absent from both counts as 1
  EXPECT_DOUBLE_EQ(pipeline::shape_iou({0, 1}, {0, 1}, {0, 1, 2}), 1.0);
  EXPECT_THROW(pipeline::shape_iou({0}, {0, 1}, {0}), ContractError);
}

TEST(Evaluate, InstanceAndCategoryMeans) {
  const auto [inst, cat] = pipeline::miou({1.0, 0.5, 0.0}, {0, 0, 1});
  EXPECT_DOUBLE_EQ(inst, 0.5);
  EXPECT_DOUBLE_EQ(cat, (0.75 + 0.0) / 2.0);
}

TEST(Evaluate, DeterministicAndShaped) {
  for (auto task : {pipeline::Task::classification, pipeline::Task::segmentation}) {
    const auto cfg = tiny_config(task);
    const auto ds = pipeline::load_dataset(cfg);
    const auto st = pipeline::make_state(cfg, ds.train);
    const auto grid = pipeline::test_grid(cfg);
    const auto a = pipeline::evaluate(st.model, ds.test, grid);
    const auto b = pipeline::evaluate(st.model, ds.test, grid);
    EXPECT_EQ(a.samples, ds.test.size());
    EXPECT_EQ(a.views, 4u);
    if (task == pipeline::Task::classification) {
      EXPECT_EQ(a.view_accuracy.size(), 4u);
      EXPECT_EQ(a.voted_accuracy, b.voted_accuracy);
      EXPECT_EQ(a.view_accuracy, b.view_accuracy);
    } else {
      EXPECT_EQ(a.view_instance_miou.size(), 4u);
      EXPECT_EQ(a.instance_miou, b.instance_miou);
      EXPECT_GE(a.instance_miou, 0.0);
      EXPECT_LE(a.instance_miou, 1.0);
    }
    EXPECT_THROW(pipeline::evaluate(st.model, ds.test, {}), ConfigError);
  }
}

// --- parameter accounting --------------------------------------------------

TEST(ParamCount, BackboneContributionByPolicy) {
  auto cfg = tiny_config();
  cfg.backbone = backbone::BackboneConfig{};  // desk geometry
  const auto m = pipeline::build_model(cfg, 4, 1);
  const auto d = cfg.backbone.embed_dim, L = cfg.backbone.depth;
  EXPECT_EQ(pipeline::count_trainable(m.params, nn::TuningPolicy::frozen).backbone_trainable(), 0u);
  EXPECT_EQ(pipeline::count_trainable(m.params, nn::TuningPolicy::norm).backbone_trainable(), 2 * d * (2 * L + 1));
  const auto full = pipeline::count_trainable(m.params, nn::TuningPolicy::full);
  EXPECT_EQ(full.trainable, full.total);
  EXPECT_EQ(full.total, m.params.scalar_count());
  EXPECT_EQ(full.trainable_by_class.at(nn::TuningClass::head), d * 4 + 4);
  const auto n = pipeline::count_trainable(m.params, nn::TuningPolicy::norm).trainable;
  const auto b = pipeline::count_trainable(m.params, nn::TuningPolicy::bias).trainable;
  const auto f = pipeline::count_trainable(m.params, nn::TuningPolicy::frozen).trainable;
  EXPECT_LT(f, n);
  EXPECT_LT(n, b);
  EXPECT_LT(b, full.trainable);
}

// --- rendering -------------------------------------------------------------

TEST(Render, WritesDecodablePngsPerView) {
  TempDir dir("render");
  const auto cfg = tiny_config();
  const auto m = pipeline::build_model(cfg, 2, 1);
  auto pc = data::gen_synthetic("torus", 300, 3);
  pc.id = "shapes/torus 1";
  const auto views = projection::test_view_grid(2, 1, cfg.phi_lo, cfg.phi_hi);
  const auto files = pipeline::render_views(pc, m, views, dir.file("out"));
  ASSERT_EQ(files.size(), 2u);
  std::vector<std::vector<std::uint8_t>> images;
  for (std::size_t v = 0; v < files.size(); ++v) {
    EXPECT_EQ(std::filesystem::path(files[v]).filename().string().rfind("shapes_torus_1_", 0), 0u) << files[v];
    const auto img = pipeline::read_png(files[v]);
    EXPECT_EQ(img.height, 32u);
    EXPECT_EQ(img.width, 32u);
    EXPECT_EQ(img.channels, 3u);
    images.push_back(img.pixels);

    // The mask marks exactly the occupied pixels of the projection.
    auto mask_path = files[v];
    mask_path.replace(mask_path.size() - 4, 4, "_occupancy.png");
    const auto mask = pipeline::read_png(mask_path);
    EXPECT_EQ(mask.channels, 1u);
    const auto binning = projection::bin_points(pc.coords, views[v], 32, 32, m.margin);
    const auto occ = binning.occupancy();
    for (std::size_t i = 0; i < occ.size(); ++i) EXPECT_EQ(mask.pixels[i] == 255, occ[i]) << i;
  }
  EXPECT_NE(images[0], images[1]);
}

TEST(Render, PngRoundTripAndErrors) {
  TempDir dir("png");
  std::vector<std::uint8_t> px(5 * 3 * 3);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(i * 7);
  pipeline::write_png(dir.file("a.png"), 5, 3, 3, px);
  const auto img = pipeline::read_png(dir.file("a.png"));
  EXPECT_EQ(img.height, 5u);
  EXPECT_EQ(img.width, 3u);
  EXPECT_EQ(img.pixels, px);
  EXPECT_THROW(pipeline::write_png(dir.file("b.png"), 5, 3, 2, px), ContractError);
  EXPECT_THROW(pipeline::write_png(dir.file("no/such/dir/c.png"), 5, 3, 3, px), IoError);
  std::ofstream(dir.file("bad.png")) << "not a png";
  EXPECT_THROW(pipeline::read_png(dir.file("bad.png")), FormatError);
}

}  // namespace
