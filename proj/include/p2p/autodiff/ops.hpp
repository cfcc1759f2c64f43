#pragma once

// Differentiable primitives.
//
// Binary elementwise ops accept equal shapes, a single-element operand, or an
// operand whose shape is a suffix of the other's (broadcast over leading
// dimensions). Nothing more general is supported.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "p2p/autodiff/gemm.hpp"
#include "p2p/autodiff/tensor.hpp"

namespace p2p::ad {

namespace detail {

struct BroadcastPlan {
  Shape out;
  std::size_t na;  // operand a index = i % na
  std::size_t nb;
};

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline BroadcastPlan plan_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa == sb) return {sa, a.numel(), b.numel()};
  if (b.numel() == 1 || is_suffix(sb, sa)) return {sa, a.numel(), b.numel()};
  if (a.numel() == 1 || is_suffix(sa, sb)) return {sb, a.numel(), b.numel()};
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(sa) + " and " +
                   to_string(sb));
}

inline std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  const auto r = static_cast<int>(rank);
  if (axis < -r || axis >= r)
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

// Splits a shape around one axis into (outer, axis length, inner).
struct AxisSplit {
  std::size_t outer, len, inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// Broadcasting is suffix-only, so the smaller operand size divides the larger
// and the output can be walked in blocks of min(na, nb) with contiguous
// indices inside each block.
template <typename Body>
void for_each_broadcast(const BroadcastPlan& plan, Body body) {
  const auto n = numel(plan.out);
  if (plan.na == 1 || plan.nb == 1) {
    const bool sa = plan.na == 1, sb = plan.nb == 1;
    for (std::size_t i = 0; i < n; ++i) body(i, sa ? 0 : i, sb ? 0 : i);
    return;
  }
  const auto block = std::min(plan.na, plan.nb);
  for (std::size_t base = 0; base < n; base += block) {
    const auto ia = base % plan.na, ib = base % plan.nb;
    for (std::size_t j = 0; j < block; ++j) body(base + j, ia + j, ib + j);
  }
}

template <typename Fwd, typename Da, typename Db>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, Da da, Db db) {
  auto plan = plan_broadcast(a, b, op);
  std::vector<double> out(numel(plan.out));
  auto av = a.data();
  auto bv = b.data();
  for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = fwd(av[ia], bv[ib]); });
  return make_result(
      plan.out, std::move(out), {a, b},
      [a, b, plan, da, db](const Node& self) {
        const double* g = self.grad.data();
        auto av = a.data();
        auto bv = b.data();
        auto ga = a.node().grad_sink();
        auto gb = b.node().grad_sink();
        if (!ga.empty())
          for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            ga[ia] += g[i] * da(av[ia], bv[ib]);
          });
        if (!gb.empty())
          for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            gb[ib] += g[i] * db(av[ia], bv[ib]);
          });
      },
      op);
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, const char* op, Fwd fwd, Deriv deriv) {
  auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return make_result(
      a.shape(), std::move(out), {a},
      [a, deriv](const Node& self) {
        auto ga = a.node().grad_sink();
        auto av = a.data();
        for (std::size_t i = 0; i < ga.size(); ++i)
          ga[i] += self.grad[i] * deriv(av[i], self.value[i]);
      },
      op);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::unary(
      a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::unary(
      a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor square(const Tensor& a) {
  return detail::unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

inline Tensor exp(const Tensor& a) {
  return detail::unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  for (double v : a.data())
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  return detail::unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor sqrt(const Tensor& a) {
  for (double v : a.data())
    if (v < 0.0) throw DomainError("sqrt of negative value " + std::to_string(v));
  return detail::unary(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

inline Tensor sin(const Tensor& a) {
  return detail::unary(
      a, "sin", [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// Exact (erf-based) GELU.
inline Tensor gelu(const Tensor& a) {
  return detail::unary(
      a, "gelu", [](double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
        return cdf + x * pdf;
      });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      a, "sigmoid",
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

/// [m,k] x [k,n] -> [m,n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  detail::gemm(a.data().data(), b.data().data(), out.data(), m, k, n, false, false, false);
  return detail::make_result(
      {m, n}, std::move(out), {a, b},
      [a, b, m, k, n](const detail::Node& self) {
        auto ga = a.node().grad_sink();
        auto gb = b.node().grad_sink();
        // dA = G · Bᵀ, dB = Aᵀ · G
        if (!ga.empty())
          detail::gemm(self.grad.data(), b.data().data(), ga.data(), m, n, k, false, true, true);
        if (!gb.empty())
          detail::gemm(a.data().data(), self.grad.data(), gb.data(), k, m, n, true, false, true);
      },
      "matmul");
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  check_shape(shape);
  if (numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return detail::make_result(
      std::move(shape), std::move(out), {a},
      [a](const detail::Node& self) {
        auto ga = a.node().grad_sink();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
      },
      "reshape");
}

/// General axis permutation: out.shape[i] = a.shape[axes[i]].
inline Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const auto r = a.rank();
  if (axes.size() != r) throw ShapeError("permute: axes length does not match rank");
  std::vector<bool> used(r, false);
  for (auto ax : axes) {
    if (ax >= r || used[ax]) throw ShapeError("permute: invalid axes");
    used[ax] = true;
  }
  Shape out_shape(r);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * a.dim(i);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = a.dim(axes[i]);
  // Source flat index for every destination flat index.
  const auto n = a.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> counter(r, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t s = 0;
    for (std::size_t d = 0; d < r; ++d) s += counter[d] * in_strides[axes[d]];
    src[i] = s;
    for (std::size_t d = r; d-- > 0;) {
      if (++counter[d] < out_shape[d]) break;
      counter[d] = 0;
    }
  }
  std::vector<double> out(n);
  auto av = a.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[src[i]];
  return detail::make_result(
      std::move(out_shape), std::move(out), {a},
      [a, src = std::move(src)](const detail::Node& self) {
        auto ga = a.node().grad_sink();
        for (std::size_t i = 0; i < src.size(); ++i) ga[src[i]] += self.grad[i];
      },
      "permute");
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + to_string(a.shape()));
  return permute(a, {1, 0});
}

/// Repeats `a` over new leading dimensions so that its shape becomes `shape`.
inline Tensor broadcast_to(const Tensor& a, Shape shape) {
  if (!(a.numel() == 1 || detail::is_suffix(a.shape(), shape)))
    throw ShapeError("broadcast_to: " + to_string(a.shape()) + " is not broadcastable to " +
                     to_string(shape));
  return add(Tensor::zeros(std::move(shape)), a);
}

/// Contiguous range [start, start+len) along one axis.
inline Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t len) {
  const auto ax = detail::normalize_axis(axis, a.rank(), "slice");
  if (len == 0 || start + len > a.dim(ax))
    throw ShapeError("slice: range out of bounds for " + to_string(a.shape()));
  const auto sp = detail::split_axis(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape[ax] = len;
  std::vector<double> out(sp.outer * len * sp.inner);
  auto av = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>((o * sp.len + start) * sp.inner),
                len * sp.inner, out.begin() + static_cast<std::ptrdiff_t>(o * len * sp.inner));
  return detail::make_result(
      std::move(out_shape), std::move(out), {a},
      [a, sp, start, len](const detail::Node& self) {
        auto ga = a.node().grad_sink();
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t j = 0; j < len * sp.inner; ++j)
            ga[(o * sp.len + start) * sp.inner + j] += self.grad[o * len * sp.inner + j];
      },
      "slice");
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const auto ax = detail::normalize_axis(axis, parts[0].rank(), "concat");
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != ax && s[d] != parts[0].dim(d))
        throw ShapeError("concat: shape mismatch " + to_string(s) + " vs " +
                         to_string(parts[0].shape()));
    out_shape[ax] += s[ax];
  }
  const auto sp = detail::split_axis(out_shape, ax);
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const auto len = p.dim(ax);
    auto pv = p.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * len * sp.inner), len * sp.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * sp.len + off) * sp.inner));
    off += len;
  }
  return detail::make_result(
      std::move(out_shape), std::move(out), parts,
      [parts, offsets, sp, ax](const detail::Node& self) {
        for (std::size_t pi = 0; pi < parts.size(); ++pi) {
          auto gp = parts[pi].node().grad_sink();
          if (gp.empty()) continue;
          const auto len = parts[pi].dim(ax);
          for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t j = 0; j < len * sp.inner; ++j)
              gp[o * len * sp.inner + j] += self.grad[(o * sp.len + offsets[pi]) * sp.inner + j];
        }
      },
      "concat");
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::make_result(
      {1}, {s}, {a},
      [a](const detail::Node& self) {
        auto ga = a.node().grad_sink();
        for (auto& g : ga) g += self.grad[0];
      },
      "sum");
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

/// Sum along one axis; the axis is removed (rank-1 inputs give shape [1]).
inline Tensor sum(const Tensor& a, int axis) {
  const auto ax = detail::normalize_axis(axis, a.rank(), "sum");
  const auto sp = detail::split_axis(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  auto av = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[o * sp.inner + i] += av[(o * sp.len + l) * sp.inner + i];
  return detail::make_result(
      std::move(out_shape), std::move(out), {a},
      [a, sp](const detail::Node& self) {
        auto ga = a.node().grad_sink();
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t l = 0; l < sp.len; ++l)
            for (std::size_t i = 0; i < sp.inner; ++i)
              ga[(o * sp.len + l) * sp.inner + i] += self.grad[o * sp.inner + i];
      },
      "sum_axis");
}

/// Global max; the subgradient goes to the lowest flat index among ties.
inline Tensor max(const Tensor& a) {
  auto av = a.data();
  std::size_t best = 0;
  for (std::size_t i = 1; i < av.size(); ++i)
    if (av[i] > av[best]) best = i;
  return detail::make_result(
      {1}, {av[best]}, {a},
      [a, best](const detail::Node& self) {
        auto ga = a.node().grad_sink();
        ga[best] += self.grad[0];
      },
      "max");
}

/// Max along one axis (removed from the shape); ties go to the lowest index.
inline Tensor max(const Tensor& a, int axis) {
  const auto ax = detail::normalize_axis(axis, a.rank(), "max");
  const auto sp = detail::split_axis(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(sp.outer * sp.inner);
  std::vector<std::size_t> arg(sp.outer * sp.inner);
  auto av = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = o * sp.len * sp.inner + i;
      for (std::size_t l = 1; l < sp.len; ++l) {
        const auto idx = (o * sp.len + l) * sp.inner + i;
        if (av[idx] > av[best]) best = idx;
      }
      out[o * sp.inner + i] = av[best];
      arg[o * sp.inner + i] = best;
    }
  return detail::make_result(
      std::move(out_shape), std::move(out), {a},
      [a, arg = std::move(arg)](const detail::Node& self) {
        auto ga = a.node().grad_sink();
        for (std::size_t j = 0; j < arg.size(); ++j) ga[arg[j]] += self.grad[j];
      },
      "max_axis");
}

// ---------------------------------------------------------------------------
// Softmax family

inline Tensor softmax(const Tensor& a, int axis = -1) {
  const auto ax = detail::normalize_axis(axis, a.rank(), "softmax");
  const auto sp = detail::split_axis(a.shape(), ax);
  auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const auto at = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
      double m = av[at(0)];
      for (std::size_t l = 1; l < sp.len; ++l) m = std::max(m, av[at(l)]);
      double z = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) z += (out[at(l)] = std::exp(av[at(l)] - m));
      for (std::size_t l = 0; l < sp.len; ++l) out[at(l)] /= z;
    }
  return detail::make_result(
      a.shape(), std::move(out), {a},
      [a, sp](const detail::Node& self) {
        auto ga = a.node().grad_sink();
        const auto& y = self.value;
        const auto& g = self.grad;
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t i = 0; i < sp.inner; ++i) {
            const auto at = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
            double dot = 0.0;
            for (std::size_t l = 0; l < sp.len; ++l) dot += g[at(l)] * y[at(l)];
            for (std::size_t l = 0; l < sp.len; ++l) ga[at(l)] += y[at(l)] * (g[at(l)] - dot);
          }
      },
      "softmax");
}

inline Tensor log_softmax(const Tensor& a, int axis = -1) {
  const auto ax = detail::normalize_axis(axis, a.rank(), "log_softmax");
  const auto sp = detail::split_axis(a.shape(), ax);
  auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const auto at = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
      double m = av[at(0)];
      for (std::size_t l = 1; l < sp.len; ++l) m = std::max(m, av[at(l)]);
      double z = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) z += std::exp(av[at(l)] - m);
      const double lz = m + std::log(z);
      for (std::size_t l = 0; l < sp.len; ++l) out[at(l)] = av[at(l)] - lz;
    }
  return detail::make_result(
      a.shape(), std::move(out), {a},
      [a, sp](const detail::Node& self) {
        auto ga = a.node().grad_sink();
        const auto& y = self.value;
        const auto& g = self.grad;
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t i = 0; i < sp.inner; ++i) {
            const auto at = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
            double gs = 0.0;
            for (std::size_t l = 0; l < sp.len; ++l) gs += g[at(l)];
            for (std::size_t l = 0; l < sp.len; ++l) ga[at(l)] += g[at(l)] - std::exp(y[at(l)]) * gs;
          }
      },
      "log_softmax");
}

// ---------------------------------------------------------------------------
// Indexing. Rows are slices along the leading axis.

inline Tensor gather_rows(const Tensor& a, std::vector<std::size_t> index) {
  if (index.empty()) throw ShapeError("gather_rows: empty index");
  const auto rows = a.dim(0);
  const auto row = a.numel() / rows;
  for (auto i : index)
    if (i >= rows)
      throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range for " +
                       to_string(a.shape()));
  Shape out_shape = a.shape();
  out_shape[0] = index.size();
  std::vector<double> out(index.size() * row);
  auto av = a.data();
  for (std::size_t r = 0; r < index.size(); ++r)
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(index[r] * row), row,
                out.begin() + static_cast<std::ptrdiff_t>(r * row));
  return detail::make_result(
      std::move(out_shape), std::move(out), {a},
      [a, row, index = std::move(index)](const detail::Node& self) {
        auto ga = a.node().grad_sink();
        for (std::size_t r = 0; r < index.size(); ++r)
          for (std::size_t j = 0; j < row; ++j) ga[index[r] * row + j] += self.grad[r * row + j];
      },
      "gather_rows");
}

/// out[index[r]] += a[r] for every row r, in increasing r; out has `rows` rows.
inline Tensor scatter_add_rows(const Tensor& a, std::vector<std::size_t> index, std::size_t rows) {
  if (index.size() != a.dim(0))
    throw ShapeError("scatter_add_rows: index length " + std::to_string(index.size()) +
                     " does not match " + to_string(a.shape()));
  const auto row = a.numel() / a.dim(0);
  for (auto i : index)
    if (i >= rows) throw ShapeError("scatter_add_rows: index " + std::to_string(i) + " out of range");
  Shape out_shape = a.shape();
  out_shape[0] = rows;
  std::vector<double> out(rows * row, 0.0);
  auto av = a.data();
  for (std::size_t r = 0; r < index.size(); ++r)
    for (std::size_t j = 0; j < row; ++j) out[index[r] * row + j] += av[r * row + j];
  return detail::make_result(
      std::move(out_shape), std::move(out), {a},
      [a, row, index = std::move(index)](const detail::Node& self) {
        auto ga = a.node().grad_sink();
        for (std::size_t r = 0; r < index.size(); ++r)
          for (std::size_t j = 0; j < row; ++j) ga[r * row + j] += self.grad[index[r] * row + j];
      },
      "scatter_add_rows");
}

/// Grouped row max: a is [R, C], index has G*k entries; out[g, c] is the max
/// of a[index[g*k + j], c] over j. The gradient goes to the first maximiser.
inline Tensor gather_max_rows(const Tensor& a, std::vector<std::size_t> index, std::size_t k) {
  if (a.rank() != 2) throw ShapeError("gather_max_rows: expected [R, C], got " + to_string(a.shape()));
  if (k == 0 || index.empty() || index.size() % k != 0)
    throw ShapeError("gather_max_rows: index length must be a positive multiple of the group size");
  const auto rows = a.dim(0), c = a.dim(1), groups = index.size() / k;
  for (auto i : index)
    if (i >= rows) throw ShapeError("gather_max_rows: index " + std::to_string(i) + " out of range");
  std::vector<double> out(groups * c);
  std::vector<std::uint32_t> arg(groups * c);
  auto av = a.data();
  for (std::size_t g = 0; g < groups; ++g) {
    double* o = out.data() + g * c;
    std::uint32_t* am = arg.data() + g * c;
    const double* first = av.data() + index[g * k] * c;
    for (std::size_t ch = 0; ch < c; ++ch) o[ch] = first[ch], am[ch] = 0;
    for (std::size_t j = 1; j < k; ++j) {
      const double* src = av.data() + index[g * k + j] * c;
      for (std::size_t ch = 0; ch < c; ++ch)
        if (src[ch] > o[ch]) o[ch] = src[ch], am[ch] = static_cast<std::uint32_t>(j);
    }
  }
  return detail::make_result(
      {groups, c}, std::move(out), {a},
      [a, c, k, index = std::move(index), arg = std::move(arg)](const detail::Node& self) {
        auto ga = a.node().grad_sink();
        const auto groups = index.size() / k;
        for (std::size_t g = 0; g < groups; ++g)
          for (std::size_t ch = 0; ch < c; ++ch)
            ga[index[g * k + arg[g * c + ch]] * c + ch] += self.grad[g * c + ch];
      },
      "gather_max_rows");
}

}  // namespace p2p::ad
