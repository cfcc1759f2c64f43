// p2p: train, evaluate, render and inspect point-to-pixel models.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 config error, 3 data/format/IO
// error, 4 numerical abort.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "p2p/p2p.hpp"
#include "p2p/pipeline/run.hpp"

namespace {

using namespace p2p;

struct GridArg {
  std::size_t n_theta = 10, n_phi = 4;
};

GridArg parse_grid(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw ConfigError("--views must look like 10x4, got '" + s + "'");
  GridArg g;
  try {
    g.n_theta = pipeline::detail::parse_int<std::size_t>(s.substr(0, x));
    g.n_phi = pipeline::detail::parse_int<std::size_t>(s.substr(x + 1));
  } catch (const ConfigError&) {
    throw ConfigError("--views must look like 10x4, got '" + s + "'");
  }
  if (g.n_theta == 0 || g.n_phi == 0) throw ConfigError("--views needs positive counts");
  return g;
}

void apply_seed_env(pipeline::RunConfig& cfg) {
  if (const char* env = std::getenv("P2P_SEED"); env && *env) {
    try {
      cfg.seed = pipeline::detail::parse_int<std::uint64_t>(env);
    } catch (const ConfigError&) {
      throw ConfigError(std::string("P2P_SEED must be an unsigned integer, got '") + env + "'");
    }
  }
}

void print_eval(pipeline::Task task, const pipeline::EvalResult& r) {
  std::printf("samples %zu, views %zu\n", r.samples, r.views);
  if (task == pipeline::Task::classification) {
    std::printf("  voted accuracy       %.4f\n", r.voted_accuracy);
    std::printf("  best view accuracy   %.4f\n", r.best_view_accuracy());
    std::printf("  mean view accuracy   %.4f\n", r.mean_view_accuracy());
  } else {
    std::printf("  instance mIoU        %.4f\n", r.instance_miou);
    std::printf("  category mIoU        %.4f\n", r.category_miou);
    std::printf("  best view mIoU       %.4f\n", r.best_view_miou());
    std::printf("  mean view mIoU       %.4f\n", r.mean_view_miou());
  }
}

int cmd_train(const std::string& config_path, const std::string& resume) {
  auto cfg = pipeline::load_config(config_path);
  apply_seed_env(cfg);
  cfg.validate();
  const auto ds = pipeline::load_dataset(cfg);
  std::printf("task %s, %zu train / %zu test samples, %zu classes, %zu epochs, policy %s\n",
              std::string(pipeline::to_string(cfg.task)).c_str(), ds.train.size(), ds.test.size(),
              ds.train.class_names.size(), cfg.epochs, std::string(nn::to_string(cfg.policy)).c_str());
  std::printf("%6s  %10s  %10s  %8s\n", "epoch", "lr", "loss", "acc");
  pipeline::RunOptions opt;
  if (!resume.empty()) opt.resume = resume;
  opt.on_epoch = [&](const pipeline::EpochStats& s) {
    if (cfg.task == pipeline::Task::classification)
      std::printf("%6llu  %10.3e  %10.5f  %8.4f\n", static_cast<unsigned long long>(s.epoch), s.lr, s.loss, s.accuracy);
    else
      std::printf("%6llu  %10.3e  %10.5f  %8s\n", static_cast<unsigned long long>(s.epoch), s.lr, s.loss, "-");
    std::fflush(stdout);
  };
  const auto r = pipeline::run(cfg, ds, opt);
  std::printf("test, %zux%zu grid: ", cfg.test_theta, cfg.test_phi);
  print_eval(cfg.task, *r.test_eval);
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& views) {
  auto restored = pipeline::restore_run(ckpt);
  const auto g = parse_grid(views);
  const auto grid = projection::test_view_grid(g.n_theta, g.n_phi, restored.config.phi_lo, restored.config.phi_hi);
  const auto r =
      pipeline::evaluate(restored.state.model, restored.data.test, grid, pipeline::vote_mode(restored.config));
  std::printf("test, %zux%zu grid: ", g.n_theta, g.n_phi);
  print_eval(restored.config.task, r);
  return 0;
}

geometry::PointCloud load_input(const std::string& input, const pipeline::RunConfig& cfg) {
  if (input.rfind("synthetic:", 0) == 0) return data::gen_synthetic(input.substr(10), cfg.n_points, cfg.seed);
  const auto dot = input.rfind('.');
  const auto ext = dot == std::string::npos ? std::string() : input.substr(dot + 1);
  geometry::PointCloud pc;
  Rng rng = Rng::derive(cfg.seed, {pipeline::kSampleStream});
  if (ext == "off" || ext == "OFF") {
    pc = data::sample_mesh(data::parse_off(input), cfg.n_points, rng);
  } else if (ext == "xyz" || ext == "XYZ") {
    pc = data::resample(data::parse_xyz(input), cfg.n_points, rng);
  } else {
    throw InputError("--input must be a .off file, a .xyz file or synthetic:<kind>, got '" + input + "'");
  }
  data::normalize_unit_sphere(pc);
  const auto slash = input.find_last_of('/');
  pc.id = input.substr(slash == std::string::npos ? 0 : slash + 1, dot == std::string::npos ? std::string::npos
                                                                                            : dot - (slash + 1));
  return pc;
}

int cmd_render(const std::string& ckpt, const std::string& config_path, const std::string& input,
               const std::string& views, const std::string& out_dir) {
  std::optional<pipeline::Restored> restored;
  std::optional<pipeline::TrainState> fresh;
  pipeline::RunConfig cfg;
  if (!ckpt.empty()) {
    restored.emplace(pipeline::restore_run(ckpt));
    cfg = restored->config;
  } else {
    if (config_path.empty()) throw ConfigError("render needs --ckpt or --config");
    cfg = pipeline::load_config(config_path);
    apply_seed_env(cfg);
    const auto ds = pipeline::load_dataset(cfg);
    fresh.emplace(pipeline::make_state(cfg, ds.train));
  }
  const auto& model = restored ? restored->state.model : fresh->model;
  const auto g = parse_grid(views);
  const auto pc = load_input(input, cfg);
  const auto files =
      pipeline::render_views(pc, model, projection::test_view_grid(g.n_theta, g.n_phi, cfg.phi_lo, cfg.phi_hi), out_dir);
  for (const auto& f : files) std::printf("%s\n", f.c_str());
  return 0;
}

int cmd_params(const std::string& config_path) {
  auto cfg = pipeline::load_config(config_path);
  apply_seed_env(cfg);
  cfg.validate();
  // Class and part counts come from the dataset description, so the data is
  // not generated just to count parameters.
  std::size_t classes = 0, parts = 0;
  const std::string_view spec = cfg.dataset;
  if (spec.rfind("synthetic:", 0) == 0) {
    auto rest = spec.substr(10);
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      ++classes;
      parts += data::part_count(data::parse_shape_kind(rest.substr(0, comma)));
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
  } else {
    const auto ds = pipeline::load_dataset(cfg);
    classes = ds.train.class_names.size();
    parts = ds.train.num_parts();
  }
  const auto model = pipeline::build_model(cfg, classes, parts);
  const auto c = pipeline::count_trainable(model.params, cfg.policy);
  std::printf("policy %s\n", std::string(nn::to_string(cfg.policy)).c_str());
  std::printf("%-16s %12s %12s\n", "class", "trainable", "total");
  for (auto cls : nn::kTuningClasses)
    std::printf("%-16s %12zu %12zu\n", std::string(nn::to_string(cls)).c_str(), c.trainable_by_class.at(cls),
                c.total_by_class.at(cls));
  std::printf("%-16s %12zu %12zu\n", "backbone", c.backbone_trainable(),
              c.total_by_class.at(nn::TuningClass::norm) + c.total_by_class.at(nn::TuningClass::bias) +
                  c.total_by_class.at(nn::TuningClass::backbone_other));
  std::printf("%-16s %12zu %12zu\n", "all", c.trainable, c.total);
  return 0;
}

int cmd_gen(const std::string& kind, std::size_t n, const std::string& out, std::uint64_t seed) {
  data::write_xyz(data::gen_synthetic(kind, n, seed), out);
  return 0;
}

template <typename F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return 4;
  } catch (const InputError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return 3;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point-to-pixel prompting: train, evaluate and render"};
  app.require_subcommand(1);

  std::string config, resume, ckpt, views = "10x4", input, out, kind;
  std::size_t n = 1024;
  std::uint64_t seed = 0;

  auto* train = app.add_subcommand("train", "Train a model from a config file");
  train->add_option("--config", config, "Run configuration")->required();
  train->add_option("--resume", resume, "Checkpoint to continue from");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on its test split");
  eval->add_option("--ckpt", ckpt, "Checkpoint")->required();
  eval->add_option("--views", views, "View grid, NthetaxNphi")->capture_default_str();

  auto* render = app.add_subcommand("render", "Write projected colour images as PNG");
  render->add_option("--ckpt", ckpt, "Checkpoint (trained weights)");
  render->add_option("--config", config, "Config (fresh weights) when no checkpoint is given");
  render->add_option("--input", input, "Input: file.off, file.xyz or synthetic:<kind>")->required();
  render->add_option("--views", views, "View grid, NthetaxNphi")->capture_default_str();
  render->add_option("--out", out, "Output directory")->required();

  auto* params = app.add_subcommand("params", "Print trainable parameter counts");
  params->add_option("--config", config, "Run configuration")->required();

  auto* gen = app.add_subcommand("gen", "Generate a synthetic point cloud as .xyz");
  gen->add_option("--kind", kind, "sphere, cube, cylinder, torus, cone or L-bracket")->required();
  gen->add_option("--n", n, "Number of points")->capture_default_str();
  gen->add_option("--out", out, "Output .xyz path")->required();
  gen->add_option("--seed", seed, "Random seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*train) return guarded([&] { return cmd_train(config, resume); });
  if (*eval) return guarded([&] { return cmd_eval(ckpt, views); });
  if (*render) return guarded([&] { return cmd_render(ckpt, config, input, views, out); });
  if (*params) return guarded([&] { return cmd_params(config); });
  if (*gen) return guarded([&] { return cmd_gen(kind, n, out, seed); });
  return 1;
}
