// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operators. Every operator checks its operand shapes and
// throws ShapeError on mismatch; there is no implicit broadcasting apart from
// bias vectors and affine parameters.

#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "bella/numcore/gemm.hpp"
#include "bella/numcore/tensor.hpp"

namespace bella::numcore {

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

template <typename T>
void accumulate(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

/// A contiguous run of rows that forms one causal sequence.
struct Segment {
  std::size_t start = 0;
  std::size_t length = 0;
};

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(),
                  "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Tensor<T> y(a.shape(), std::move(out));
  const bool track = tape.needs_grad({&a, &b});
  tape.record("add", {a, b}, y, track, [a, b, y]() mutable {
    auto g = y.grad();
    if (a.requires_grad()) detail::accumulate(a.grad_buffer(), g);
    if (b.requires_grad()) detail::accumulate(b.grad_buffer(), g);
  });
  return y;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(),
                  "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tensor<T> y(a.shape(), std::move(out));
  const bool track = tape.needs_grad({&a, &b});
  tape.record("mul", {a, b}, y, track, [a, b, y]() mutable {
    auto g = y.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
    }
  });
  return y;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T factor) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  Tensor<T> y(a.shape(), std::move(out));
  tape.record("scale", {a}, y, tape.needs_grad({&a}), [a, y, factor]() mutable {
    auto g = y.grad();
    auto ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
  return y;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a) {
  T acc = 0;
  for (auto v : a.values()) acc += v;
  Tensor<T> y({1}, {acc});
  tape.record("sum", {a}, y, tape.needs_grad({&a}), [a, y]() mutable {
    const T g = y.grad()[0];
    for (auto& v : a.grad_buffer()) v += g;
  });
  return y;
}

template <typename T>
Tensor<T> tanh(Tape<T>& tape, const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
  Tensor<T> y(a.shape(), std::move(out));
  tape.record("tanh", {a}, y, tape.needs_grad({&a}), [a, y]() mutable {
    auto g = y.grad();
    auto ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
  });
  return y;
}

/// GELU, tanh approximation.
template <typename T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& a) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = a[i];
    out[i] = T(0.5) * x * (T(1) + std::tanh(kC * (x + kA * x * x * x)));
  }
  Tensor<T> y(a.shape(), std::move(out));
  tape.record("gelu", {a}, y, tape.needs_grad({&a}), [a, y]() mutable {
    auto g = y.grad();
    auto ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T x = a[i];
      const T t = std::tanh(kC * (x + kA * x * x * x));
      const T dt = (T(1) - t * t) * kC * (T(1) + T(3) * kA * x * x);
      ga[i] += g[i] * (T(0.5) * (T(1) + t) + T(0.5) * x * dt);
    }
  });
  return y;
}

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& a, Shape shape) {
  detail::require(shape_numel(shape) == a.size(),
                  "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  Tensor<T> y(std::move(shape), std::vector<T>(a.values().begin(), a.values().end()));
  tape.record("reshape", {a}, y, tape.needs_grad({&a}), [a, y]() mutable {
    detail::accumulate(a.grad_buffer(), y.grad());
  });
  return y;
}

// ---------------------------------------------------------------------------
// Dense layers

/// y = x W^T + b over the last axis. w is [out, in]; b may be undefined.
template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = {}) {
  detail::require(w.rank() == 2, "linear: weight must be rank 2, got " + shape_str(w.shape()));
  detail::require(x.rank() >= 1 && x.shape().back() == w.dim(1),
                  "linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                      shape_str(w.shape()));
  const std::size_t in = w.dim(1), out = w.dim(0), rows = x.size() / in;
  if (b.defined())
    detail::require(b.rank() == 1 && b.dim(0) == out,
                    "linear: bias " + shape_str(b.shape()) + " does not match " + std::to_string(out));
  Shape yshape = x.shape();
  yshape.back() = out;
  std::vector<T> data(rows * out);
  gemm::nt(x.values().data(), w.values().data(), data.data(), rows, out, in, false);
  if (b.defined())
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < out; ++o) data[r * out + o] += b[o];
  Tensor<T> y(std::move(yshape), std::move(data));
  const bool track = tape.needs_grad({&x, &w, &b});
  tape.record("linear", {x, w, b}, y, track, [x, w, b, y, rows, in, out]() mutable {
    const T* g = y.grad().data();
    if (x.requires_grad()) gemm::nn(g, w.values().data(), x.grad_buffer().data(), rows, in, out, true);
    if (w.requires_grad()) gemm::tn(g, x.values().data(), w.grad_buffer().data(), out, in, rows, true);
    if (b.defined() && b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out; ++o) gb[o] += g[r * out + o];
    }
  });
  return y;
}

/// Row-wise normalization over the last axis with population variance,
/// followed by the affine map gamma * xhat + beta.
template <typename T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T epsilon) {
  detail::require(x.rank() >= 1, "layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  detail::require(gamma.rank() == 1 && gamma.dim(0) == d && beta.rank() == 1 && beta.dim(0) == d,
                  "layer_norm: affine parameters must be [" + std::to_string(d) + "]");
  detail::require(epsilon > T(0), "layer_norm: epsilon must be positive");
  const std::size_t rows = x.size() / d;
  std::vector<T> xhat(x.size()), rstd(rows), out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.values().data() + r * d;
    T mean = 0;
    for (std::size_t i = 0; i < d; ++i) mean += row[i];
    mean /= T(d);
    T var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + epsilon);
    rstd[r] = rs;
    for (std::size_t i = 0; i < d; ++i) {
      const T h = (row[i] - mean) * rs;
      xhat[r * d + i] = h;
      out[r * d + i] = gamma[i] * h + beta[i];
    }
  }
  Tensor<T> y(x.shape(), std::move(out));
  const bool track = tape.needs_grad({&x, &gamma, &beta});
  tape.record("layer_norm", {x, gamma, beta}, y, track,
              [x, gamma, beta, y, xhat = std::move(xhat), rstd = std::move(rstd), rows, d]() mutable {
                auto g = y.grad();
                if (gamma.requires_grad() || beta.requires_grad()) {
                  std::vector<T> gg(d, T(0)), gb(d, T(0));
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < d; ++i) {
                      gg[i] += g[r * d + i] * xhat[r * d + i];
                      gb[i] += g[r * d + i];
                    }
                  if (gamma.requires_grad()) detail::accumulate<T>(gamma.grad_buffer(), gg);
                  if (beta.requires_grad()) detail::accumulate<T>(beta.grad_buffer(), gb);
                }
                if (!x.requires_grad()) return;
                auto gx = x.grad_buffer();
                for (std::size_t r = 0; r < rows; ++r) {
                  T mean_dh = 0, mean_dh_h = 0;
                  for (std::size_t i = 0; i < d; ++i) {
                    const T dh = g[r * d + i] * gamma[i];
                    mean_dh += dh;
                    mean_dh_h += dh * xhat[r * d + i];
                  }
                  mean_dh /= T(d);
                  mean_dh_h /= T(d);
                  for (std::size_t i = 0; i < d; ++i) {
                    const T dh = g[r * d + i] * gamma[i];
                    gx[r * d + i] += rstd[r] * (dh - mean_dh - xhat[r * d + i] * mean_dh_h);
                  }
                }
              });
  return y;
}

// ---------------------------------------------------------------------------
// Spatial

namespace detail {

struct ConvGeometry {
  std::size_t batch, cin, h, w, cout, k, stride, pad, oh, ow;
  bool batched;
};

inline ConvGeometry conv_geometry(const Shape& in, const Shape& kernel, std::size_t stride, std::size_t pad) {
  require(in.size() == 3 || in.size() == 4, "conv2d: input must be [C,H,W] or [N,C,H,W], got " + shape_str(in));
  require(kernel.size() == 4, "conv2d: kernels must be [Cout,Cin,k,k], got " + shape_str(kernel));
  ConvGeometry g{};
  g.batched = in.size() == 4;
  const std::size_t o = g.batched ? 1 : 0;
  g.batch = g.batched ? in[0] : 1;
  g.cin = in[o];
  g.h = in[o + 1];
  g.w = in[o + 2];
  g.cout = kernel[0];
  g.k = kernel[2];
  g.stride = stride;
  g.pad = pad;
  require(kernel[1] == g.cin, "conv2d: kernel expects " + std::to_string(kernel[1]) + " input channels, input has " +
                                  std::to_string(g.cin));
  require(kernel[2] == kernel[3], "conv2d: kernels must be square, got " + shape_str(kernel));
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(g.h + 2 * pad >= g.k && g.w + 2 * pad >= g.k,
          "conv2d: kernel " + std::to_string(g.k) + " larger than padded input " + shape_str(in));
  g.oh = (g.h + 2 * pad - g.k) / stride + 1;
  g.ow = (g.w + 2 * pad - g.k) / stride + 1;
  return g;
}

// cols[(c*k + ky)*k + kx, oy*ow + ox]
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t ncols = g.oh * g.ow;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* dst = cols + ((c * g.k + ky) * g.k + kx) * ncols;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && iy < static_cast<long>(g.h) && ix >= 0 && ix < static_cast<long>(g.w);
            dst[oy * g.ow + ox] = inside ? x[(c * g.h + iy) * g.w + ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* dx) {
  const std::size_t ncols = g.oh * g.ow;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* src = cols + ((c * g.k + ky) * g.k + kx) * ncols;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            dx[(c * g.h + iy) * g.w + ix] += src[oy * g.ow + ox];
          }
        }
      }
}

}  // namespace detail

/// Cross-correlation plus per-channel bias. Input [C,H,W] or [N,C,H,W];
/// output spatial size is floor((H + 2*padding - k) / stride) + 1.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding) {
  const auto g = detail::conv_geometry(x.shape(), kernels.shape(), stride, padding);
  detail::require(bias.rank() == 1 && bias.dim(0) == g.cout,
                  "conv2d: bias must be [" + std::to_string(g.cout) + "], got " + shape_str(bias.shape()));
  const std::size_t ckk = g.cin * g.k * g.k, ncols = g.oh * g.ow;
  const std::size_t in_stride = g.cin * g.h * g.w, out_stride = g.cout * ncols;
  std::vector<T> cols(g.batch * ckk * ncols);
  std::vector<T> out(g.batch * out_stride);
  for (std::size_t n = 0; n < g.batch; ++n) {
    T* cn = cols.data() + n * ckk * ncols;
    detail::im2col(x.values().data() + n * in_stride, g, cn);
    T* on = out.data() + n * out_stride;
    gemm::nn(kernels.values().data(), cn, on, g.cout, ncols, ckk, false);
    for (std::size_t o = 0; o < g.cout; ++o)
      for (std::size_t p = 0; p < ncols; ++p) on[o * ncols + p] += bias[o];
  }
  Shape oshape = g.batched ? Shape{g.batch, g.cout, g.oh, g.ow} : Shape{g.cout, g.oh, g.ow};
  Tensor<T> y(std::move(oshape), std::move(out));
  const bool track = tape.needs_grad({&x, &kernels, &bias});
  tape.record("conv2d", {x, kernels, bias}, y, track,
              [x, kernels, bias, y, g, cols = std::move(cols), ckk, ncols, in_stride, out_stride]() mutable {
                const T* gy = y.grad().data();
                std::vector<T> dcols;
                if (x.requires_grad()) dcols.resize(ckk * ncols);
                for (std::size_t n = 0; n < g.batch; ++n) {
                  const T* gn = gy + n * out_stride;
                  const T* cn = cols.data() + n * ckk * ncols;
                  if (kernels.requires_grad())
                    gemm::nt(gn, cn, kernels.grad_buffer().data(), g.cout, ckk, ncols, true);
                  if (bias.requires_grad()) {
                    auto gb = bias.grad_buffer();
                    for (std::size_t o = 0; o < g.cout; ++o)
                      for (std::size_t p = 0; p < ncols; ++p) gb[o] += gn[o * ncols + p];
                  }
                  if (x.requires_grad()) {
                    gemm::tn(kernels.values().data(), gn, dcols.data(), ckk, ncols, g.cout, false);
                    detail::col2im(dcols.data(), g, x.grad_buffer().data() + n * in_stride);
                  }
                }
              });
  return y;
}

/// Adaptive average pooling to an out_h x out_w grid. Bin i spans
/// [floor(i*H/out_h), ceil((i+1)*H/out_h)).
template <typename T>
Tensor<T> adaptive_avg_pool2d(Tape<T>& tape, const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  detail::require(x.rank() == 3 || x.rank() == 4, "avgpool: input must be [C,H,W] or [N,C,H,W], got " +
                                                      shape_str(x.shape()));
  detail::require(out_h >= 1 && out_w >= 1, "avgpool: output grid must be positive");
  const bool batched = x.rank() == 4;
  const std::size_t planes = batched ? x.dim(0) * x.dim(1) : x.dim(0);
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  detail::require(out_h <= h && out_w <= w, "avgpool: output grid larger than input " + shape_str(x.shape()));
  auto lo = [](std::size_t i, std::size_t in, std::size_t outn) { return i * in / outn; };
  auto hi = [](std::size_t i, std::size_t in, std::size_t outn) { return ((i + 1) * in + outn - 1) / outn; };
  std::vector<T> out(planes * out_h * out_w);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oy = 0; oy < out_h; ++oy)
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const std::size_t y0 = lo(oy, h, out_h), y1 = hi(oy, h, out_h);
        const std::size_t x0 = lo(ox, w, out_w), x1 = hi(ox, w, out_w);
        T acc = 0;
        for (std::size_t yy = y0; yy < y1; ++yy)
          for (std::size_t xx = x0; xx < x1; ++xx) acc += x[(p * h + yy) * w + xx];
        out[(p * out_h + oy) * out_w + ox] = acc / T((y1 - y0) * (x1 - x0));
      }
  Shape oshape = x.shape();
  oshape[oshape.size() - 2] = out_h;
  oshape[oshape.size() - 1] = out_w;
  Tensor<T> y(std::move(oshape), std::move(out));
  tape.record("avgpool", {x}, y, tape.needs_grad({&x}), [x, y, planes, h, w, out_h, out_w, lo, hi]() mutable {
    auto g = y.grad();
    auto gx = x.grad_buffer();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t oy = 0; oy < out_h; ++oy)
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const std::size_t y0 = lo(oy, h, out_h), y1 = hi(oy, h, out_h);
          const std::size_t x0 = lo(ox, w, out_w), x1 = hi(ox, w, out_w);
          const T share = g[(p * out_h + oy) * out_w + ox] / T((y1 - y0) * (x1 - x0));
          for (std::size_t yy = y0; yy < y1; ++yy)
            for (std::size_t xx = x0; xx < x1; ++xx) gx[(p * h + yy) * w + xx] += share;
        }
  });
  return y;
}

// ---------------------------------------------------------------------------
// Row manipulation

/// Looks up rows of `table` ([V, d]) for each id.
template <typename T>
Tensor<T> embedding(Tape<T>& tape, const Tensor<T>& table, const std::vector<int>& ids) {
  detail::require(table.rank() == 2, "embedding: table must be rank 2, got " + shape_str(table.shape()));
  detail::require(!ids.empty(), "embedding: empty id list");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    detail::require(ids[r] >= 0 && static_cast<std::size_t>(ids[r]) < vocab,
                    "embedding: id " + std::to_string(ids[r]) + " outside [0, " + std::to_string(vocab) + ")");
    std::copy_n(table.values().data() + ids[r] * d, d, out.data() + r * d);
  }
  Tensor<T> y({ids.size(), d}, std::move(out));
  tape.record("embedding", {table}, y, tape.needs_grad({&table}), [table, y, ids, d]() mutable {
    auto g = y.grad();
    auto gt = table.grad_buffer();
    for (std::size_t r = 0; r < ids.size(); ++r)
      for (std::size_t i = 0; i < d; ++i) gt[ids[r] * d + i] += g[r * d + i];
  });
  return y;
}

/// Copy of `base` ([R, d]) where row rows[j] is replaced by row j of `src`.
template <typename T>
Tensor<T> scatter_rows(Tape<T>& tape, const Tensor<T>& base, const std::vector<std::size_t>& rows,
                       const Tensor<T>& src) {
  detail::require(base.rank() == 2 && src.rank() == 2 && base.dim(1) == src.dim(1) && src.dim(0) == rows.size(),
                  "scatter_rows: " + shape_str(src.shape()) + " into " + shape_str(base.shape()) + " at " +
                      std::to_string(rows.size()) + " rows");
  const std::size_t d = base.dim(1);
  std::vector<T> out(base.values().begin(), base.values().end());
  std::vector<char> replaced(base.dim(0), 0);
  for (std::size_t j = 0; j < rows.size(); ++j) {
    detail::require(rows[j] < base.dim(0), "scatter_rows: row index out of range");
    detail::require(!replaced[rows[j]], "scatter_rows: duplicate target row");
    replaced[rows[j]] = 1;
    std::copy_n(src.values().data() + j * d, d, out.data() + rows[j] * d);
  }
  Tensor<T> y(base.shape(), std::move(out));
  const bool track = tape.needs_grad({&base, &src});
  tape.record("scatter_rows", {base, src}, y, track, [base, src, y, rows, replaced, d]() mutable {
    auto g = y.grad();
    if (base.requires_grad()) {
      auto gb = base.grad_buffer();
      for (std::size_t r = 0; r < replaced.size(); ++r)
        if (!replaced[r])
          for (std::size_t i = 0; i < d; ++i) gb[r * d + i] += g[r * d + i];
    }
    if (src.requires_grad()) {
      auto gs = src.grad_buffer();
      for (std::size_t j = 0; j < rows.size(); ++j)
        for (std::size_t i = 0; i < d; ++i) gs[j * d + i] += g[rows[j] * d + i];
    }
  });
  return y;
}

/// Selects rows of x ([R, d]) in the given order.
template <typename T>
Tensor<T> gather_rows(Tape<T>& tape, const Tensor<T>& x, const std::vector<std::size_t>& rows) {
  detail::require(x.rank() == 2 && !rows.empty(), "gather_rows: need rank-2 input and at least one row");
  const std::size_t d = x.dim(1);
  std::vector<T> out(rows.size() * d);
  for (std::size_t j = 0; j < rows.size(); ++j) {
    detail::require(rows[j] < x.dim(0), "gather_rows: row index out of range");
    std::copy_n(x.values().data() + rows[j] * d, d, out.data() + j * d);
  }
  Tensor<T> y({rows.size(), d}, std::move(out));
  tape.record("gather_rows", {x}, y, tape.needs_grad({&x}), [x, y, rows, d]() mutable {
    auto g = y.grad();
    auto gx = x.grad_buffer();
    for (std::size_t j = 0; j < rows.size(); ++j)
      for (std::size_t i = 0; i < d; ++i) gx[rows[j] * d + i] += g[j * d + i];
  });
  return y;
}

// ---------------------------------------------------------------------------
// Attention

/// Fused multi-head causal self-attention over packed sequences. q, k, v are
/// [R, d]; each segment attends only within itself and only to earlier or
/// equal positions. Masked scores are set to -inf before the softmax.
template <typename T>
Tensor<T> causal_attention(Tape<T>& tape, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           const std::vector<Segment>& segments, std::size_t heads) {
  detail::require(q.rank() == 2 && q.shape() == k.shape() && q.shape() == v.shape(),
                  "attention: q/k/v shapes differ: " + shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                      shape_str(v.shape()));
  const std::size_t rows = q.dim(0), d = q.dim(1);
  detail::require(heads >= 1 && d % heads == 0,
                  "attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  std::size_t covered = 0;
  for (const auto& s : segments) {
    detail::require(s.start == covered && s.length >= 1, "attention: segments must tile the rows in order");
    covered += s.length;
  }
  detail::require(covered == rows, "attention: segments cover " + std::to_string(covered) + " of " +
                                       std::to_string(rows) + " rows");
  const std::size_t dh = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(T(dh));
  const T neg_inf = -std::numeric_limits<T>::infinity();

  // probs stored per (segment, head) as a dense length x length block.
  std::vector<std::size_t> prob_offset(segments.size());
  std::size_t total = 0;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    prob_offset[s] = total;
    total += heads * segments[s].length * segments[s].length;
  }
  std::vector<T> probs(total, T(0));
  std::vector<T> out(rows * d, T(0));
  const T* Q = q.values().data();
  const T* K = k.values().data();
  const T* V = v.values().data();
  std::vector<T> scores;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const std::size_t n = segments[s].length, base = segments[s].start;
    scores.assign(n, T(0));
    for (std::size_t h = 0; h < heads; ++h) {
      T* P = probs.data() + prob_offset[s] + h * n * n;
      for (std::size_t i = 0; i < n; ++i) {
        const T* qi = Q + (base + i) * d + h * dh;
        T mx = neg_inf;
        for (std::size_t j = 0; j < n; ++j) {
          if (j > i) {
            scores[j] = neg_inf;
            continue;
          }
          const T* kj = K + (base + j) * d + h * dh;
          T dot = 0;
          for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
          scores[j] = dot * inv_sqrt;
          mx = std::max(mx, scores[j]);
        }
        T denom = 0;
        for (std::size_t j = 0; j < n; ++j) {
          const T e = std::exp(scores[j] - mx);  // exp(-inf) == 0
          P[i * n + j] = e;
          denom += e;
        }
        T* oi = out.data() + (base + i) * d + h * dh;
        for (std::size_t j = 0; j <= i; ++j) {
          P[i * n + j] /= denom;
          const T* vj = V + (base + j) * d + h * dh;
          const T p = P[i * n + j];
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
      }
    }
  }
  Tensor<T> y(q.shape(), std::move(out));
  const bool track = tape.needs_grad({&q, &k, &v});
  tape.record("causal_attention", {q, k, v}, y, track,
              [q, k, v, y, segments, heads, dh, d, inv_sqrt, probs = std::move(probs),
               prob_offset = std::move(prob_offset)]() mutable {
                const T* G = y.grad().data();
                const T* Q = q.values().data();
                const T* K = k.values().data();
                const T* V = v.values().data();
                T* gq = q.requires_grad() ? q.grad_buffer().data() : nullptr;
                T* gk = k.requires_grad() ? k.grad_buffer().data() : nullptr;
                T* gv = v.requires_grad() ? v.grad_buffer().data() : nullptr;
                std::vector<T> dp;
                for (std::size_t s = 0; s < segments.size(); ++s) {
                  const std::size_t n = segments[s].length, base = segments[s].start;
                  dp.assign(n, T(0));
                  for (std::size_t h = 0; h < heads; ++h) {
                    const T* P = probs.data() + prob_offset[s] + h * n * n;
                    for (std::size_t i = 0; i < n; ++i) {
                      const T* gi = G + (base + i) * d + h * dh;
                      T rowdot = 0;
                      for (std::size_t j = 0; j <= i; ++j) {
                        const T* vj = V + (base + j) * d + h * dh;
                        T acc = 0;
                        for (std::size_t c = 0; c < dh; ++c) acc += gi[c] * vj[c];
                        dp[j] = acc;
                        rowdot += P[i * n + j] * acc;
                        if (gv) {
                          T* gvj = gv + (base + j) * d + h * dh;
                          const T p = P[i * n + j];
                          for (std::size_t c = 0; c < dh; ++c) gvj[c] += p * gi[c];
                        }
                      }
                      const T* qi = Q + (base + i) * d + h * dh;
                      for (std::size_t j = 0; j <= i; ++j) {
                        const T ds = P[i * n + j] * (dp[j] - rowdot) * inv_sqrt;
                        if (ds == T(0)) continue;
                        const T* kj = K + (base + j) * d + h * dh;
                        if (gq) {
                          T* gqi = gq + (base + i) * d + h * dh;
                          for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                        }
                        if (gk) {
                          T* gkj = gk + (base + j) * d + h * dh;
                          for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                        }
                      }
                    }
                  }
                }
              });
  return y;
}

// ---------------------------------------------------------------------------
// Losses

/// Mean over rows of -log softmax(logits[r])[targets[r]]; logits is [R, V].
/// Stabilized by subtracting the row maximum.
template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, const std::vector<int>& targets) {
  detail::require(logits.rank() == 2, "cross_entropy: logits must be [R, V], got " + shape_str(logits.shape()));
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  detail::require(targets.size() == rows, "cross_entropy: " + std::to_string(targets.size()) +
                                              " targets for " + std::to_string(rows) + " rows");
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= vocab)
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                              std::to_string(vocab) + ")");
  std::vector<T> softmax(rows * vocab);
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = logits.values().data() + r * vocab;
    T mx = row[0];
    for (std::size_t i = 1; i < vocab; ++i) mx = std::max(mx, row[i]);
    T denom = 0;
    for (std::size_t i = 0; i < vocab; ++i) {
      softmax[r * vocab + i] = std::exp(row[i] - mx);
      denom += softmax[r * vocab + i];
    }
    for (std::size_t i = 0; i < vocab; ++i) softmax[r * vocab + i] /= denom;
    total += -(row[targets[r]] - mx - std::log(denom));
  }
  Tensor<T> y({1}, {total / T(rows)});
  tape.record("cross_entropy", {logits}, y, tape.needs_grad({&logits}),
              [logits, y, targets, rows, vocab, softmax = std::move(softmax)]() mutable {
                const T g = y.grad()[0] / T(rows);
                auto gl = logits.grad_buffer();
                for (std::size_t r = 0; r < rows; ++r) {
                  for (std::size_t i = 0; i < vocab; ++i) gl[r * vocab + i] += g * softmax[r * vocab + i];
                  gl[r * vocab + targets[r]] -= g;
                }
              });
  return y;
}

/// Single-distribution form: logits is [V].
template <typename T>
Tensor<T> softmax_cross_entropy(Tape<T>& tape, const Tensor<T>& logits, int target) {
  detail::require(logits.rank() == 1, "softmax_cross_entropy: logits must be [V], got " + shape_str(logits.shape()));
  auto row = reshape(tape, logits, {1, logits.dim(0)});
  return cross_entropy(tape, row, {target});
}

}  // namespace bella::numcore
