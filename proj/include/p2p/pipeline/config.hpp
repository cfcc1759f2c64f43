#pragma once

// Run configuration as flat "key = value" text. Grammar (also in
// docs/config.md):
//
//   line    := blank | comment | entry
//   comment := '#' anything
//   entry   := key ws* '=' ws* value ws* ('#' anything)?
//   key     := [a-z0-9_]+
//
// Values are typed per key: integers, decimals, booleans (true/false) or bare
// strings (no '#', surrounding whitespace trimmed). Unknown or repeated keys
// are errors. Keys not given keep their defaults.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "p2p/backbone/vit.hpp"
#include "p2p/data/augment.hpp"
#include "p2p/errors.hpp"
#include "p2p/nn/optim.hpp"
#include "p2p/nn/params.hpp"
#include "p2p/projection/project.hpp"
#include "p2p/projection/rotation.hpp"

namespace p2p::pipeline {

enum class Task { classification, segmentation };

inline std::string_view to_string(Task t) { return t == Task::classification ? "classification" : "segmentation"; }

struct RunConfig {
  Task task = Task::classification;
  backbone::BackboneConfig backbone;
  nn::TuningPolicy policy = nn::TuningPolicy::norm;
  nn::AdamWConfig optimizer;
  std::size_t epochs = 300;
  std::size_t batch_size = 64;
  std::int64_t margin = -1;  // -1: scale the 224-pixel default to the image size
  std::size_t n_points = 4096;
  std::size_t neighbors = 32;
  double phi_lo = projection::kTrainPhiLo;
  double phi_hi = projection::kTrainPhiHi;
  std::size_t test_theta = 10;
  std::size_t test_phi = 4;
  std::uint64_t seed = 0;
  std::string dataset = "synthetic:sphere,cube,cylinder,torus";
  std::size_t train_per_class = 64;
  std::size_t test_per_class = 32;
  bool augment = true;
  data::AugmentConfig augmentation;
  std::size_t head_hidden = 0;
  std::size_t seg_dim = 32;
  std::string vote = "sum";
  std::string checkpoint;
  std::size_t checkpoint_every = 0;
  std::string metrics;

  std::size_t image_size() const { return backbone.image_size; }
  std::size_t effective_margin() const {
    return margin < 0 ? projection::default_margin(backbone.image_size) : static_cast<std::size_t>(margin);
  }

  void validate() const {
    backbone.validate();
    augmentation.validate();
    if (optimizer.lr <= 0.0) throw ConfigError("lr must be positive");
    if (optimizer.weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
      throw ConfigError("betas must lie in [0, 1)");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (neighbors == 0 || neighbors > n_points) throw ConfigError("neighbors must be in [1, n_points]");
    if (phi_lo > phi_hi) throw ConfigError("phi range is reversed");
    if (test_theta == 0 || test_phi == 0) throw ConfigError("test view grid must be non-empty");
    if (2 * effective_margin() >= backbone.image_size) throw ConfigError("margin too large for the image");
    if (vote != "sum" && vote != "count") throw ConfigError("vote must be 'sum' or 'count'");
  }
};

namespace detail {

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
    throw ConfigError("expected a number, got '" + std::string(s) + "'");
  return v;
}

template <typename Int>
Int parse_int(std::string_view s) {
  Int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ConfigError("expected an integer, got '" + std::string(s) + "'");
  return v;
}

inline bool parse_bool(std::string_view s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError("expected true or false, got '" + std::string(s) + "'");
}

#define P2P_SIZE_FIELD(name, expr)                                                   \
  Field{name, [](const RunConfig& c) { return std::to_string(c.expr); },             \
        [](RunConfig& c, std::string_view v) { c.expr = parse_int<std::size_t>(v); }}
#define P2P_DOUBLE_FIELD(name, expr)                                         \
  Field{name, [](const RunConfig& c) { return format_double(c.expr); },      \
        [](RunConfig& c, std::string_view v) { c.expr = parse_double(v); }}
#define P2P_STRING_FIELD(name, expr)                            \
  Field{name, [](const RunConfig& c) { return c.expr; },        \
        [](RunConfig& c, std::string_view v) { c.expr = std::string(v); }}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      Field{"task", [](const RunConfig& c) { return std::string(to_string(c.task)); },
            [](RunConfig& c, std::string_view v) {
              if (v == "classification") c.task = Task::classification;
              else if (v == "segmentation") c.task = Task::segmentation;
              else throw ConfigError("task must be classification or segmentation, got '" + std::string(v) + "'");
            }},
      P2P_SIZE_FIELD("image_size", backbone.image_size),
      P2P_SIZE_FIELD("patch_size", backbone.patch_size),
      P2P_SIZE_FIELD("embed_dim", backbone.embed_dim),
      P2P_SIZE_FIELD("depth", backbone.depth),
      P2P_SIZE_FIELD("heads", backbone.heads),
      P2P_DOUBLE_FIELD("mlp_ratio", backbone.mlp_ratio),
      P2P_DOUBLE_FIELD("drop_path", backbone.drop_path),
      Field{"policy", [](const RunConfig& c) { return std::string(nn::to_string(c.policy)); },
            [](RunConfig& c, std::string_view v) { c.policy = nn::parse_policy(v); }},
      P2P_DOUBLE_FIELD("lr", optimizer.lr),
      P2P_DOUBLE_FIELD("weight_decay", optimizer.weight_decay),
      P2P_DOUBLE_FIELD("beta1", optimizer.beta1),
      P2P_DOUBLE_FIELD("beta2", optimizer.beta2),
      P2P_DOUBLE_FIELD("eps", optimizer.eps),
      P2P_SIZE_FIELD("epochs", epochs),
      P2P_SIZE_FIELD("batch_size", batch_size),
      Field{"margin", [](const RunConfig& c) { return std::to_string(c.margin); },
            [](RunConfig& c, std::string_view v) { c.margin = parse_int<std::int64_t>(v); }},
      P2P_SIZE_FIELD("n_points", n_points),
      P2P_SIZE_FIELD("neighbors", neighbors),
      P2P_DOUBLE_FIELD("phi_lo", phi_lo),
      P2P_DOUBLE_FIELD("phi_hi", phi_hi),
      P2P_SIZE_FIELD("test_theta", test_theta),
      P2P_SIZE_FIELD("test_phi", test_phi),
      Field{"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
            [](RunConfig& c, std::string_view v) { c.seed = parse_int<std::uint64_t>(v); }},
      P2P_STRING_FIELD("dataset", dataset),
      P2P_SIZE_FIELD("train_per_class", train_per_class),
      P2P_SIZE_FIELD("test_per_class", test_per_class),
      Field{"augment", [](const RunConfig& c) { return std::string(c.augment ? "true" : "false"); },
            [](RunConfig& c, std::string_view v) { c.augment = parse_bool(v); }},
      P2P_DOUBLE_FIELD("scale_lo", augmentation.scale_lo),
      P2P_DOUBLE_FIELD("scale_hi", augmentation.scale_hi),
      P2P_DOUBLE_FIELD("shift_lo", augmentation.shift_lo),
      P2P_DOUBLE_FIELD("shift_hi", augmentation.shift_hi),
      P2P_SIZE_FIELD("head_hidden", head_hidden),
      P2P_SIZE_FIELD("seg_dim", seg_dim),
      P2P_STRING_FIELD("vote", vote),
      P2P_STRING_FIELD("checkpoint", checkpoint),
      P2P_SIZE_FIELD("checkpoint_every", checkpoint_every),
      P2P_STRING_FIELD("metrics", metrics),
  };
  return table;
}

#undef P2P_SIZE_FIELD
#undef P2P_DOUBLE_FIELD
#undef P2P_STRING_FIELD

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Every key, one per line, in a fixed order.
inline std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : detail::fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

inline RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  std::vector<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    auto where = [&] { return "config line " + std::to_string(line_no) + ": "; };
    if (eq == std::string_view::npos) throw ConfigError(where() + "expected 'key = value'");
    const auto key = std::string(detail::trim(line.substr(0, eq)));
    const auto value = detail::trim(line.substr(eq + 1));
    const detail::Field* field = nullptr;
    for (const auto& f : detail::fields())
      if (f.key == key) field = &f;
    if (!field) throw ConfigError(where() + "unknown key '" + key + "'");
    for (const auto& s : seen)
      if (s == key) throw ConfigError(where() + "key '" + key + "' given twice");
    seen.push_back(key);
    try {
      field->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where() + key + ": " + e.what());
    }
    if (end == text.size()) break;
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline void save_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << format_config(cfg);
}

inline bool operator==(const RunConfig& a, const RunConfig& b) { return format_config(a) == format_config(b); }

}  // namespace p2p::pipeline
