#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "p2p/errors.hpp"
#include "p2p/nn/params.hpp"

namespace p2p::nn {

struct AdamWConfig {
  double lr = 5e-4;
  double weight_decay = 5e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One decoupled-weight-decay Adam update of a single buffer at step t >= 1.
inline void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                         std::span<double> v, const AdamWConfig& cfg, std::uint64_t t, double lr) {
  if (!(lr > 0.0)) throw ConfigError("adamw: learning rate must be positive");
  if (t == 0) throw ContractError("adamw: step counter starts at 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    param[i] *= 1.0 - lr * cfg.weight_decay;
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

/// AdamW with per-parameter moment buffers keyed by parameter name.
class AdamW {
 public:
  struct Moments {
    std::vector<double> m, v;
  };

  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {
    if (!(cfg_.lr > 0.0)) throw ConfigError("adamw: learning rate must be positive");
  }

  /// Updates every parameter that is trainable under `policy`, using the
  /// gradient accumulated on it (absent gradients count as zero).
  void step(LayerParams& params, TuningPolicy policy, double lr) {
    ++t_;
    for (auto& [name, p] : params) {
      if (!is_trainable(policy, p.cls)) continue;
      auto& st = state_[name];
      const auto n = p.tensor.numel();
      if (st.m.empty()) st.m.assign(n, 0.0), st.v.assign(n, 0.0);
      std::vector<double> zeros;
      std::span<const double> g = p.tensor.grad();
      if (g.empty()) {
        zeros.assign(n, 0.0);
        g = zeros;
      }
      adamw_update(p.tensor.mutable_data(), g, st.m, st.v, cfg_, t_, lr);
    }
  }

  const AdamWConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }
  std::map<std::string, Moments>& state() { return state_; }
  const std::map<std::string, Moments>& state() const { return state_; }

 private:
  AdamWConfig cfg_;
  std::uint64_t t_ = 0;
  std::map<std::string, Moments> state_;
};

/// Cosine annealing from base_lr at epoch 0 down to 0 at total_epochs.
inline double cosine_lr(double epoch, double total_epochs, double base_lr) {
  if (total_epochs <= 0) return base_lr;
  const double lr = base_lr * (1.0 + std::cos(std::numbers::pi * epoch / total_epochs)) / 2.0;
  return lr < 0.0 ? 0.0 : lr;
}

}  // namespace p2p::nn
