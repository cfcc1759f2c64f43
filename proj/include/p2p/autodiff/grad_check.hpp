#pragma once

// Central-difference gradient verification.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "p2p/autodiff/tensor.hpp"

namespace p2p::ad {

struct GradCheckOptions {
  /// Per-element step is step_scale * (1 + |x|).
  double step_scale = 1e-5;
  /// Check at most this many elements (0 = all), chosen by `seed`.
  std::size_t max_elements = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

namespace detail {

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

inline std::vector<std::size_t> pick_elements(std::size_t n, const GradCheckOptions& opt) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (opt.max_elements == 0 || opt.max_elements >= n) return idx;
  std::mt19937_64 rng(opt.seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(opt.max_elements);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline double checked_value(const Tensor& y) {
  if (y.numel() != 1) throw ContractError("grad_check: function must return a scalar");
  const double v = y.item();
  if (std::isnan(v)) throw EvaluationError("grad_check: function returned NaN");
  return v;
}

}  // namespace detail

/// Checks d(loss_fn())/d(param) for a leaf parameter that loss_fn reads.
/// The parameter is perturbed in place and restored afterwards.
inline GradCheckResult grad_check_param(const std::function<Tensor()>& loss_fn, Tensor& param,
                                        const GradCheckOptions& opt = {}) {
  if (!param.is_leaf()) throw ContractError("grad_check_param: parameter must be a leaf");
  const bool was_trainable = param.requires_grad();
  param.set_requires_grad(true);
  param.zero_grad();
  {
    auto y = loss_fn();
    detail::checked_value(y);
    backward(y);
  }
  std::vector<double> analytic(param.numel(), 0.0);
  if (param.has_grad()) std::copy(param.grad().begin(), param.grad().end(), analytic.begin());

  GradCheckResult res;
  auto values = param.mutable_data();
  NoGradGuard no_grad;
  for (auto i : detail::pick_elements(param.numel(), opt)) {
    const double x0 = values[i];
    const double h = opt.step_scale * (1.0 + std::abs(x0));
    values[i] = x0 + h;
    const double fp = detail::checked_value(loss_fn());
    values[i] = x0 - h;
    const double fm = detail::checked_value(loss_fn());
    values[i] = x0;
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = detail::relative_error(analytic[i], numeric);
    ++res.checked;
    if (err >= res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_index = i;
      res.worst_analytic = analytic[i];
      res.worst_numeric = numeric;
    }
  }
  param.clear_grad();
  param.set_requires_grad(was_trainable);
  return res;
}

/// Max over elements of |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
/// for a scalar function f at x.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         const GradCheckOptions& opt = {}) {
  for (double v : x.data())
    if (!std::isfinite(v)) throw ContractError("grad_check: input must be finite");
  auto leaf = x.detach(true);
  return grad_check_param([&] { return f(leaf); }, leaf, opt).max_rel_error;
}

}  // namespace p2p::ad
