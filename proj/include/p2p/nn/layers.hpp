#pragma once

// Layers over channels-last tensors. Images are [H, W, C]; token sequences
// and point sets are [N, C]. Convolution weights are stored [k, k, Cin, Cout]
// so that the im2col product needs no transposition.

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "p2p/autodiff/gemm.hpp"
#include "p2p/autodiff/ops.hpp"
#include "p2p/errors.hpp"
#include "p2p/util/rng.hpp"

namespace p2p::nn {

using ad::Tensor;

/// x [N, Cin] · W [Cin, Cout] + b [Cout]
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return ad::add(ad::matmul(x, w), b);
}

inline Tensor linear(const Tensor& x, const Tensor& w) { return ad::matmul(x, w); }

struct Conv2dGeometry {
  std::size_t h, w, cin, cout, k, stride, pad, out_h, out_w;
};

inline Conv2dGeometry conv2d_geometry(const Tensor& x, const Tensor& weight, std::size_t stride,
                                      std::size_t padding) {
  if (x.rank() != 3) throw ShapeError("conv2d: expected [H,W,C] input, got " + ad::to_string(x.shape()));
  if (weight.rank() != 4 || weight.dim(0) != weight.dim(1) || weight.dim(2) != x.dim(2))
    throw ShapeError("conv2d: weight " + ad::to_string(weight.shape()) + " incompatible with input " +
                     ad::to_string(x.shape()));
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  Conv2dGeometry g{x.dim(0), x.dim(1), x.dim(2), weight.dim(3), weight.dim(0), stride, padding, 0, 0};
  const auto span_h = g.h + 2 * g.pad;
  const auto span_w = g.w + 2 * g.pad;
  if (span_h < g.k || span_w < g.k) throw ConfigError("conv2d: kernel larger than padded input");
  if ((span_h - g.k) % stride != 0 || (span_w - g.k) % stride != 0)
    throw ConfigError("conv2d: input " + std::to_string(g.h) + "x" + std::to_string(g.w) +
                      " does not tile evenly with kernel " + std::to_string(g.k) + " stride " +
                      std::to_string(stride));
  g.out_h = (span_h - g.k) / stride + 1;
  g.out_w = (span_w - g.k) / stride + 1;
  return g;
}

namespace detail {

// Stride-1 convolution without im2col. On the zero-padded image flattened to
// rows of Cin, output pixel (oy, ox) sits at flat row q = oy*Wp + ox and reads
// row q + ky*Wp + kx for tap (ky, kx). So each tap is one GEMM over a
// contiguous row range; rows with ox >= out_w wrap around the border and are
// computed but discarded.
inline Tensor conv2d_stride1(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dGeometry& g) {
  const auto hp = g.h + 2 * g.pad, wp = g.w + 2 * g.pad;
  const auto q = (g.out_h - 1) * wp + g.out_w;
  const auto tap = g.cin * g.cout;
  std::vector<double> xp(hp * wp * g.cin, 0.0);
  auto xv = x.data();
  for (std::size_t y = 0; y < g.h; ++y)
    std::copy_n(xv.data() + y * g.w * g.cin, g.w * g.cin, xp.data() + ((y + g.pad) * wp + g.pad) * g.cin);
  std::vector<double> full(q * g.cout, 0.0);
  const double* wv = weight.data().data();
  for (std::size_t ky = 0; ky < g.k; ++ky)
    for (std::size_t kx = 0; kx < g.k; ++kx)
      ad::detail::gemm(xp.data() + (ky * wp + kx) * g.cin, wv + (ky * g.k + kx) * tap, full.data(), q, g.cin, g.cout,
                       false, false, true);
  std::vector<double> out(g.out_h * g.out_w * g.cout);
  auto bv = bias.data();
  for (std::size_t oy = 0; oy < g.out_h; ++oy)
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      const double* src = full.data() + (oy * wp + ox) * g.cout;
      double* dst = out.data() + (oy * g.out_w + ox) * g.cout;
      for (std::size_t c = 0; c < g.cout; ++c) dst[c] = src[c] + bv[c];
    }
  return ad::detail::make_result(
      {g.out_h, g.out_w, g.cout}, std::move(out), {x, weight, bias},
      [x, weight, bias, g, hp, wp, q, tap, xp = std::move(xp)](const ad::detail::Node& self) {
        const double* G = self.grad.data();
        auto gw = weight.node().grad_sink();
        auto gb = bias.node().grad_sink();
        auto gx = x.node().grad_sink();
        if (!gb.empty())
          for (std::size_t r = 0; r < g.out_h * g.out_w; ++r)
            for (std::size_t c = 0; c < g.cout; ++c) gb[c] += G[r * g.cout + c];
        if (gw.empty() && gx.empty()) return;
        std::vector<double> dfull(q * g.cout, 0.0);
        for (std::size_t oy = 0; oy < g.out_h; ++oy)
          std::copy_n(G + oy * g.out_w * g.cout, g.out_w * g.cout, dfull.data() + oy * wp * g.cout);
        const double* wv = weight.data().data();
        std::vector<double> dxp(gx.empty() ? 0 : hp * wp * g.cin, 0.0);
        for (std::size_t ky = 0; ky < g.k; ++ky)
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            const auto off = (ky * wp + kx) * g.cin;
            const auto t = (ky * g.k + kx) * tap;
            if (!gw.empty())
              ad::detail::gemm(xp.data() + off, dfull.data(), gw.data() + t, g.cin, q, g.cout, true, false, true);
            if (!gx.empty())
              ad::detail::gemm(dfull.data(), wv + t, dxp.data() + off, q, g.cout, g.cin, false, true, true);
          }
        if (gx.empty()) return;
        for (std::size_t y = 0; y < g.h; ++y) {
          const double* src = dxp.data() + ((y + g.pad) * wp + g.pad) * g.cin;
          double* dst = gx.data() + y * g.w * g.cin;
          for (std::size_t i = 0; i < g.w * g.cin; ++i) dst[i] += src[i];
        }
      },
      "conv2d");
}

}  // namespace detail

/// 2D convolution, x [H,W,Cin], weight [k,k,Cin,Cout], bias [Cout] -> [H',W',Cout].
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                     std::size_t stride = 1, std::size_t padding = 0) {
  const auto g = conv2d_geometry(x, weight, stride, padding);
  if (bias.numel() != g.cout) throw ShapeError("conv2d: bias size does not match Cout");
  const auto rows = g.out_h * g.out_w;
  const auto cols = g.k * g.k * g.cin;
  const bool pointwise = g.k == 1 && g.stride == 1 && g.pad == 0;
  if (g.stride == 1 && !pointwise) return detail::conv2d_stride1(x, weight, bias, g);

  // Row r of the patch matrix holds the receptive field of output pixel r in
  // (ky, kx, ci) order, matching the weight layout.
  auto im2col = [g, rows, cols](std::span<const double> in) {
    std::vector<double> col(rows * cols, 0.0);
    for (std::size_t oy = 0; oy < g.out_h; ++oy)
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        double* dst = col.data() + (oy * g.out_w + ox) * cols;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            const double* src = in.data() + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.cin;
            std::copy_n(src, g.cin, dst + (ky * g.k + kx) * g.cin);
          }
        }
      }
    return col;
  };

  std::vector<double> col = pointwise ? std::vector<double>() : im2col(x.data());
  const double* a = pointwise ? x.data().data() : col.data();
  std::vector<double> out(rows * g.cout);
  ad::detail::gemm(a, weight.data().data(), out.data(), rows, cols, g.cout, false, false, false);
  auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < g.cout; ++c) out[r * g.cout + c] += bv[c];

  return ad::detail::make_result(
      {g.out_h, g.out_w, g.cout}, std::move(out), {x, weight, bias},
      [x, weight, bias, g, rows, cols, pointwise, col = std::move(col)](const ad::detail::Node& self) {
        const double* G = self.grad.data();
        auto gw = weight.node().grad_sink();
        auto gb = bias.node().grad_sink();
        auto gx = x.node().grad_sink();
        const double* a = pointwise ? x.data().data() : col.data();
        if (!gw.empty()) ad::detail::gemm(a, G, gw.data(), cols, rows, g.cout, true, false, true);
        if (!gb.empty())
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < g.cout; ++c) gb[c] += G[r * g.cout + c];
        if (gx.empty()) return;
        if (pointwise) {
          ad::detail::gemm(G, weight.data().data(), gx.data(), rows, g.cout, cols, false, true, true);
          return;
        }
        std::vector<double> dcol(rows * cols);
        ad::detail::gemm(G, weight.data().data(), dcol.data(), rows, g.cout, cols, false, true, false);
        for (std::size_t oy = 0; oy < g.out_h; ++oy)
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const double* src = dcol.data() + (oy * g.out_w + ox) * cols;
            for (std::size_t ky = 0; ky < g.k; ++ky) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
              for (std::size_t kx = 0; kx < g.k; ++kx) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                double* dst = gx.data() + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.cin;
                const double* s = src + (ky * g.k + kx) * g.cin;
                for (std::size_t c = 0; c < g.cin; ++c) dst[c] += s[c];
              }
            }
          }
      },
      "conv2d");
}

/// Same-size, stride-1 convolution of an image that is zero everywhere except
/// at `pixels` (flat y*W+x indices, one row of `rows` [M,Cin] per pixel).
/// Equivalent to conv2d on the dense image with padding k/2, but costs
/// O(M) instead of O(H*W). The input gradient is produced only for the given
/// rows, which is all a sparse producer (feature projection) needs.
inline Tensor conv2d_sparse_input(const Tensor& rows, std::vector<std::size_t> pixels, std::size_t h,
                                  std::size_t w, const Tensor& weight, const Tensor& bias) {
  if (rows.rank() != 2 || rows.dim(0) != pixels.size())
    throw ShapeError("conv2d_sparse_input: rows " + ad::to_string(rows.shape()) +
                     " do not match pixel list");
  if (weight.rank() != 4 || weight.dim(0) != weight.dim(1) || weight.dim(2) != rows.dim(1) ||
      weight.dim(0) % 2 == 0)
    throw ShapeError("conv2d_sparse_input: bad weight shape " + ad::to_string(weight.shape()));
  const auto m = rows.dim(0), cin = rows.dim(1), k = weight.dim(0), cout = weight.dim(3);
  const auto taps = k * k;
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  if (bias.numel() != cout) throw ShapeError("conv2d_sparse_input: bias size mismatch");
  for (auto p : pixels)
    if (p >= h * w) throw ShapeError("conv2d_sparse_input: pixel out of range");

  // Wcat[ci, tap*Cout + co] = W[tap, ci, co]
  auto wcat = [&] {
    std::vector<double> out(cin * taps * cout);
    auto wv = weight.data();
    for (std::size_t t = 0; t < taps; ++t)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t co = 0; co < cout; ++co)
          out[ci * taps * cout + t * cout + co] = wv[(t * cin + ci) * cout + co];
    return out;
  }();

  // target[r*taps + t] = output pixel receiving input row r through tap t, or npos.
  constexpr auto npos = static_cast<std::size_t>(-1);
  std::vector<std::size_t> target(m * taps, npos);
  for (std::size_t r = 0; r < m; ++r) {
    const auto y = static_cast<std::ptrdiff_t>(pixels[r] / w);
    const auto x = static_cast<std::ptrdiff_t>(pixels[r] % w);
    for (std::size_t t = 0; t < taps; ++t) {
      const auto oy = y - (static_cast<std::ptrdiff_t>(t / k) - pad);
      const auto ox = x - (static_cast<std::ptrdiff_t>(t % k) - pad);
      if (oy < 0 || ox < 0 || oy >= static_cast<std::ptrdiff_t>(h) || ox >= static_cast<std::ptrdiff_t>(w))
        continue;
      target[r * taps + t] = static_cast<std::size_t>(oy) * w + static_cast<std::size_t>(ox);
    }
  }

  std::vector<double> contrib(m * taps * cout);
  ad::detail::gemm(rows.data().data(), wcat.data(), contrib.data(), m, cin, taps * cout, false, false,
                   false);
  std::vector<double> out(h * w * cout);
  auto bv = bias.data();
  for (std::size_t p = 0; p < h * w; ++p) std::copy(bv.begin(), bv.end(), out.begin() + static_cast<std::ptrdiff_t>(p * cout));
  for (std::size_t i = 0; i < m * taps; ++i) {
    if (target[i] == npos) continue;
    double* dst = out.data() + target[i] * cout;
    const double* src = contrib.data() + i * cout;
    for (std::size_t c = 0; c < cout; ++c) dst[c] += src[c];
  }

  return ad::detail::make_result(
      {h, w, cout}, std::move(out), {rows, weight, bias},
      [rows, weight, bias, m, cin, cout, taps, target = std::move(target), wcat = std::move(wcat)](
          const ad::detail::Node& self) {
        const double* G = self.grad.data();
        std::vector<double> gcat(m * taps * cout, 0.0);
        for (std::size_t i = 0; i < m * taps; ++i)
          if (target[i] != npos) std::copy_n(G + target[i] * cout, cout, gcat.data() + i * cout);
        if (auto gb = bias.node().grad_sink(); !gb.empty())
          for (std::size_t p = 0; p < self.grad.size() / cout; ++p)
            for (std::size_t c = 0; c < cout; ++c) gb[c] += G[p * cout + c];
        if (auto gr = rows.node().grad_sink(); !gr.empty())
          ad::detail::gemm(gcat.data(), wcat.data(), gr.data(), m, taps * cout, cin, false, true, true);
        if (auto gw = weight.node().grad_sink(); !gw.empty()) {
          std::vector<double> dwcat(cin * taps * cout);
          ad::detail::gemm(rows.data().data(), gcat.data(), dwcat.data(), cin, m, taps * cout, true,
                           false, false);
          for (std::size_t t = 0; t < taps; ++t)
            for (std::size_t ci = 0; ci < cin; ++ci)
              for (std::size_t co = 0; co < cout; ++co)
                gw[(t * cin + ci) * cout + co] += dwcat[ci * taps * cout + t * cout + co];
        }
      },
      "conv2d_sparse_input");
}

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes over the last axis, then applies gamma/beta (both [C]).
inline Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        double eps = kLayerNormEps) {
  const auto c = x.shape().back();
  if (gamma.numel() != c || beta.numel() != c)
    throw ShapeError("layernorm: affine size does not match last axis of " + ad::to_string(x.shape()));
  const auto rows = x.numel() / c;
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<double> xhat(x.numel()), inv_std(rows), out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[r * c + j] = (row[j] - mu) * inv_std[r];
      out[r * c + j] = xhat[r * c + j] * gv[j] + bv[j];
    }
  }
  return ad::detail::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, c, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const ad::detail::Node& self) {
        const auto& g = self.grad;
        auto gx = x.node().grad_sink();
        auto gg = gamma.node().grad_sink();
        auto gbeta = beta.node().grad_sink();
        auto gv = gamma.data();
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            const auto i = r * c + j;
            if (!gg.empty()) gg[j] += g[i] * xhat[i];
            if (!gbeta.empty()) gbeta[j] += g[i];
            const double d = g[i] * gv[j];
            mean_d += d;
            mean_dx += d * xhat[i];
          }
          if (gx.empty()) continue;
          mean_d /= static_cast<double>(c);
          mean_dx /= static_cast<double>(c);
          for (std::size_t j = 0; j < c; ++j) {
            const auto i = r * c + j;
            gx[i] += inv_std[r] * (g[i] * gv[j] - mean_d - xhat[i] * mean_dx);
          }
        }
      },
      "layernorm");
}

struct AttentionParams {
  Tensor qkv_weight;  // [C, 3C]
  Tensor qkv_bias;    // [3C]
  Tensor proj_weight; // [C, C]
  Tensor proj_bias;   // [C]
};

/// Multi-head self-attention over a token sequence x [T, C].
/// When `attention` is non-null it receives one [T, T] weight matrix per head.
inline Tensor mhsa(const Tensor& x, const AttentionParams& p, std::size_t heads,
                   std::vector<Tensor>* attention = nullptr) {
  if (x.rank() != 2) throw ShapeError("mhsa: expected [T, C], got " + ad::to_string(x.shape()));
  const auto c = x.dim(1);
  if (heads == 0 || c % heads != 0)
    throw ConfigError("mhsa: embed dim " + std::to_string(c) + " not divisible by " +
                      std::to_string(heads) + " heads");
  const auto d = c / heads;
  auto qkv = linear(x, p.qkv_weight, p.qkv_bias);
  std::vector<Tensor> outs;
  outs.reserve(heads);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t hd = 0; hd < heads; ++hd) {
    auto q = ad::slice(qkv, 1, hd * d, d);
    auto k = ad::slice(qkv, 1, c + hd * d, d);
    auto v = ad::slice(qkv, 1, 2 * c + hd * d, d);
    auto scores = ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt_d);
    auto weights = ad::softmax(scores, -1);
    if (attention) attention->push_back(weights);
    outs.push_back(ad::matmul(weights, v));
  }
  auto merged = heads == 1 ? outs[0] : ad::concat(outs, 1);
  return linear(merged, p.proj_weight, p.proj_bias);
}

/// Max over a set axis (e.g. the k edges of each point).
inline Tensor maxpool_over_set(const Tensor& x, int axis) { return ad::max(x, axis); }

/// Non-overlapping 2x2 max pooling of [H, W, C].
inline Tensor maxpool2x2(const Tensor& x) {
  if (x.rank() != 3 || x.dim(0) % 2 || x.dim(1) % 2)
    throw ShapeError("maxpool2x2: expected even [H,W,C], got " + ad::to_string(x.shape()));
  const auto h = x.dim(0) / 2, w = x.dim(1) / 2, c = x.dim(2);
  auto t = ad::reshape(x, {h, 2, w, 2, c});
  t = ad::permute(t, {0, 2, 1, 3, 4});
  t = ad::reshape(t, {h, w, 4, c});
  return ad::max(t, 2);
}

/// Transpose convolution with kernel == stride == factor.
/// x [h, w, Cin], weight [Cin, f, f, Cout], bias [Cout] -> [h*f, w*f, Cout].
inline Tensor upsample_transpose(const Tensor& x, const Tensor& weight, const Tensor& bias,
                                 std::size_t factor) {
  if (x.rank() != 3 || weight.rank() != 4 || weight.dim(0) != x.dim(2) ||
      weight.dim(1) != factor || weight.dim(2) != factor)
    throw ShapeError("upsample_transpose: weight " + ad::to_string(weight.shape()) +
                     " incompatible with input " + ad::to_string(x.shape()));
  const auto h = x.dim(0), w = x.dim(1), cin = x.dim(2), cout = weight.dim(3);
  auto y = ad::matmul(ad::reshape(x, {h * w, cin}), ad::reshape(weight, {cin, factor * factor * cout}));
  y = ad::reshape(y, {h, w, factor, factor, cout});
  y = ad::permute(y, {0, 2, 1, 3, 4});
  y = ad::reshape(y, {h * factor, w * factor, cout});
  return ad::add(y, bias);
}

/// Nearest-neighbour upsampling of [h, w, C] by an integer factor.
inline Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  if (factor == 1) return x;
  const auto h = x.dim(0), w = x.dim(1), c = x.dim(2);
  std::vector<std::size_t> idx;
  idx.reserve(h * w * factor * factor);
  for (std::size_t y = 0; y < h * factor; ++y)
    for (std::size_t xx = 0; xx < w * factor; ++xx) idx.push_back((y / factor) * w + xx / factor);
  auto flat = ad::gather_rows(ad::reshape(x, {h * w, c}), std::move(idx));
  return ad::reshape(flat, {h * factor, w * factor, c});
}

/// Inverted dropout. Identity when p == 0 or not training.
inline Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return x;
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < p ? 0.0 : 1.0 / (1.0 - p);
  return ad::mul(x, Tensor::from(x.shape(), std::move(mask)));
}

/// Stochastic depth on a residual branch: drops the whole branch with probability p.
inline Tensor drop_path(const Tensor& branch, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return branch;
  const double keep = rng.uniform() < p ? 0.0 : 1.0 / (1.0 - p);
  return ad::scale(branch, keep);
}

// ---------------------------------------------------------------------------
// Initialisers

inline Tensor uniform_tensor(ad::Shape shape, double bound, Rng& rng) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v));
}

/// He-uniform for ReLU layers: bound sqrt(6 / fan_in).
inline Tensor kaiming_uniform(ad::Shape shape, std::size_t fan_in, Rng& rng) {
  return uniform_tensor(std::move(shape), std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
}

inline Tensor xavier_uniform(ad::Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return uniform_tensor(std::move(shape), std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)), rng);
}

}  // namespace p2p::nn
