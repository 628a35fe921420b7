#ifndef DISCO_MODCONV_HPP
#define DISCO_MODCONV_HPP

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "disco/errors.hpp"
#include "disco/tensor.hpp"

namespace disco {

inline constexpr double kDefaultDemodEps = 1e-8;
inline constexpr double kLeakySlope = 0.2;

/// Convolution weights [outC,inC,kH,kW] with optional bias [outC].
/// Kernel extents are odd so "same" padding is symmetric.
template <typename Scalar>
struct ConvKernel {
  Tensor<Scalar> weights;
  Tensor<Scalar> bias;  // empty when absent

  ConvKernel() = default;
  ConvKernel(Tensor<Scalar> w, Tensor<Scalar> b = {}) : weights(std::move(w)), bias(std::move(b)) {
    require_rank(weights, 4, "conv kernel");
    if (weights.dim(2) % 2 == 0 || weights.dim(3) % 2 == 0) {
      throw DomainError("conv kernel extents must be odd, got " + shape_string(weights.shape()));
    }
    if (!bias.empty()) require_shape(bias, {weights.dim(0)}, "conv bias");
    require_finite(weights, "conv kernel");
  }

  Index out_channels() const { return weights.dim(0); }
  Index in_channels() const { return weights.dim(1); }
  Index kernel_h() const { return weights.dim(2); }
  Index kernel_w() const { return weights.dim(3); }
  bool has_bias() const { return !bias.empty(); }
};

/// Per-input-channel modulation scales, strictly positive.
template <typename Scalar>
struct ScaleVector {
  Tensor<Scalar> scales;

  explicit ScaleVector(Tensor<Scalar> s) : scales(std::move(s)) {
    require_rank(scales, 1, "scale vector");
    if (!scales.all_finite() || (scales.vec().array() <= Scalar(0)).any()) {
      throw DomainError("scale vector entries must be finite and > 0");
    }
  }
  static ScaleVector ones(Index n) { return ScaleVector(Tensor<Scalar>({n}, Scalar(1))); }
  Index size() const { return scales.size(); }
};

/// Expression code f_exp (audio half ⊕ eye half).
template <typename Scalar>
struct ExpressionFeature {
  Tensor<Scalar> vector;

  explicit ExpressionFeature(Tensor<Scalar> v) : vector(std::move(v)) {
    require_rank(vector, 1, "expression feature");
    require_finite(vector, "expression feature");
  }
  Index size() const { return vector.size(); }
};

/// Affine head mapping an expression feature to one layer's scales.
template <typename Scalar>
struct ScaleHead {
  Tensor<Scalar> weights;  // [inC, D]
  Tensor<Scalar> bias;     // [inC]
};

// ---------------------------------------------------------------------------
// Plain convolution (cross-correlation, zero padding).
// ---------------------------------------------------------------------------

inline Index conv_out_extent(Index in, Index kernel, Index stride) {
  return (in + 2 * (kernel / 2) - kernel) / stride + 1;
}

namespace detail {

/// Column block for output rows [row0, row1): one row per (channel, ky, kx)
/// tap, one column per output pixel in the block.
template <typename Scalar>
void im2col_rows(const Tensor<Scalar>& x, Index kh, Index kw, Index stride, Index row0,
                 Index row1, RowMatrix<Scalar>& cols) {
  const Index channels = x.dim(0), h = x.dim(1), w = x.dim(2);
  const Index ow = conv_out_extent(w, kw, stride);
  const Index pad_h = kh / 2, pad_w = kw / 2;
  cols.resize(channels * kh * kw, (row1 - row0) * ow);
  for (Index ci = 0; ci < channels; ++ci) {
    for (Index ky = 0; ky < kh; ++ky) {
      for (Index kx = 0; kx < kw; ++kx) {
        Scalar* row = cols.row((ci * kh + ky) * kw + kx).data();
        // Valid output columns: 0 <= ox*stride + kx - pad_w < w.
        Index ox_lo = 0;
        while (ox_lo < ow && ox_lo * stride + kx - pad_w < 0) ++ox_lo;
        Index ox_hi = ow;
        while (ox_hi > ox_lo && (ox_hi - 1) * stride + kx - pad_w >= w) --ox_hi;
        for (Index oy = row0; oy < row1; ++oy) {
          const Index iy = oy * stride + ky - pad_h;
          Scalar* dst = row + (oy - row0) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, Scalar(0));
            continue;
          }
          const Scalar* src = x.data() + (ci * h + iy) * w + kx - pad_w;
          std::fill(dst, dst + ox_lo, Scalar(0));
          if (stride == 1) {
            std::copy(src + ox_lo, src + ox_hi, dst + ox_lo);
          } else {
            for (Index ox = ox_lo; ox < ox_hi; ++ox) dst[ox] = src[ox * stride];
          }
          std::fill(dst + ox_hi, dst + ow, Scalar(0));
        }
      }
    }
  }
}

/// Scatter-adds a column block back onto `x` (adjoint of im2col_rows).
template <typename Scalar>
void col2im_rows(const RowMatrix<Scalar>& cols, Index kh, Index kw, Index stride, Index row0,
                 Index row1, Tensor<Scalar>& x) {
  const Index channels = x.dim(0), h = x.dim(1), w = x.dim(2);
  const Index ow = conv_out_extent(w, kw, stride);
  const Index pad_h = kh / 2, pad_w = kw / 2;
  for (Index ci = 0; ci < channels; ++ci) {
    for (Index ky = 0; ky < kh; ++ky) {
      for (Index kx = 0; kx < kw; ++kx) {
        const Scalar* row = cols.row((ci * kh + ky) * kw + kx).data();
        Index ox_lo = 0;
        while (ox_lo < ow && ox_lo * stride + kx - pad_w < 0) ++ox_lo;
        Index ox_hi = ow;
        while (ox_hi > ox_lo && (ox_hi - 1) * stride + kx - pad_w >= w) --ox_hi;
        for (Index oy = row0; oy < row1; ++oy) {
          const Index iy = oy * stride + ky - pad_h;
          if (iy < 0 || iy >= h) continue;
          Scalar* dst = x.data() + (ci * h + iy) * w + kx - pad_w;
          const Scalar* src = row + (oy - row0) * ow;
          for (Index ox = ox_lo; ox < ox_hi; ++ox) dst[ox * stride] += src[ox];
        }
      }
    }
  }
}

/// Output rows per im2col block, keeping a block near 2 MB.
inline Index conv_chunk_rows(Index taps, Index out_w, Index out_h) {
  constexpr Index kChunkElements = Index(1) << 18;
  return std::clamp<Index>(kChunkElements / std::max<Index>(1, taps * out_w), 1, out_h);
}

/// Valid output range [lo, hi) for one kernel offset at stride 1.
inline std::pair<Index, Index> shifted_range(Index n, Index offset) {
  return {std::max<Index>(0, -offset), std::min<Index>(n, n - offset)};
}

/// Stride-1 convolution by shifted plane accumulation. Cheaper than im2col
/// when few output channels share a large kernel.
template <typename Scalar>
void direct_conv(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k, Tensor<Scalar>& out) {
  using Plane = Eigen::Map<RowMatrix<Scalar>, 0, Eigen::OuterStride<>>;
  using ConstPlane = Eigen::Map<const RowMatrix<Scalar>, 0, Eigen::OuterStride<>>;
  const Index h = x.dim(1), w = x.dim(2);
  for (Index o = 0; o < k.out_channels(); ++o) {
    for (Index c = 0; c < k.in_channels(); ++c) {
      for (Index ky = 0; ky < k.kernel_h(); ++ky) {
        const Index dy = ky - k.kernel_h() / 2;
        const auto [y0, y1] = shifted_range(h, dy);
        for (Index kx = 0; kx < k.kernel_w(); ++kx) {
          const Index dx = kx - k.kernel_w() / 2;
          const auto [x0, x1] = shifted_range(w, dx);
          if (y1 <= y0 || x1 <= x0) continue;
          const Scalar wv = k.weights.data()[((o * k.in_channels() + c) * k.kernel_h() + ky) *
                                                 k.kernel_w() + kx];
          Plane dst(out.data() + (o * h + y0) * w + x0, y1 - y0, x1 - x0, Eigen::OuterStride<>(w));
          ConstPlane src(x.data() + (c * h + y0 + dy) * w + x0 + dx, y1 - y0, x1 - x0,
                         Eigen::OuterStride<>(w));
          dst += wv * src;
        }
      }
    }
  }
}

template <typename Scalar>
void direct_conv_vjp(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k,
                     const Tensor<Scalar>& upstream, Tensor<Scalar>& grad_w,
                     Tensor<Scalar>* grad_x) {
  using Plane = Eigen::Map<RowMatrix<Scalar>, 0, Eigen::OuterStride<>>;
  using ConstPlane = Eigen::Map<const RowMatrix<Scalar>, 0, Eigen::OuterStride<>>;
  const Index h = x.dim(1), w = x.dim(2);
  for (Index o = 0; o < k.out_channels(); ++o) {
    for (Index c = 0; c < k.in_channels(); ++c) {
      for (Index ky = 0; ky < k.kernel_h(); ++ky) {
        const Index dy = ky - k.kernel_h() / 2;
        const auto [y0, y1] = shifted_range(h, dy);
        for (Index kx = 0; kx < k.kernel_w(); ++kx) {
          const Index dx = kx - k.kernel_w() / 2;
          const auto [x0, x1] = shifted_range(w, dx);
          if (y1 <= y0 || x1 <= x0) continue;
          const Index wi = ((o * k.in_channels() + c) * k.kernel_h() + ky) * k.kernel_w() + kx;
          ConstPlane up(upstream.data() + (o * h + y0) * w + x0, y1 - y0, x1 - x0,
                        Eigen::OuterStride<>(w));
          ConstPlane src(x.data() + (c * h + y0 + dy) * w + x0 + dx, y1 - y0, x1 - x0,
                         Eigen::OuterStride<>(w));
          grad_w.data()[wi] = up.cwiseProduct(src).sum();
          if (grad_x) {
            Plane dst(grad_x->data() + (c * h + y0 + dy) * w + x0 + dx, y1 - y0, x1 - x0,
                      Eigen::OuterStride<>(w));
            dst += k.weights.data()[wi] * up;
          }
        }
      }
    }
  }
}

inline bool use_direct_conv(Index out_channels, Index kh, Index kw, Index stride) {
  return stride == 1 && out_channels <= 4 && kh * kw >= 9;
}

template <typename Scalar>
RowMatrix<Scalar> im2col(const Tensor<Scalar>& x, Index kh, Index kw, Index stride) {
  RowMatrix<Scalar> cols;
  im2col_rows(x, kh, kw, stride, 0, conv_out_extent(x.dim(1), kh, stride), cols);
  return cols;
}

template <typename Scalar>
void require_conv_input(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k, const char* what) {
  require_rank(x, 3, what);
  if (x.dim(0) != k.in_channels()) {
    throw DomainError(std::string(what) + ": input has " + std::to_string(x.dim(0)) +
                      " channels, kernel expects " + std::to_string(k.in_channels()));
  }
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k, Index stride = 1) {
  detail::require_conv_input(x, k, "conv2d");
  const Index oh = conv_out_extent(x.dim(1), k.kernel_h(), stride);
  const Index ow = conv_out_extent(x.dim(2), k.kernel_w(), stride);
  const Index taps = k.in_channels() * k.kernel_h() * k.kernel_w();
  Tensor<Scalar> out({k.out_channels(), oh, ow});
  auto out_mat = out.matrix(k.out_channels(), oh * ow);
  const auto w_mat = k.weights.matrix(k.out_channels(), taps);
  if (k.kernel_h() == 1 && k.kernel_w() == 1 && stride == 1) {
    out_mat.noalias() = w_mat * x.matrix(k.in_channels(), oh * ow);
  } else if (detail::use_direct_conv(k.out_channels(), k.kernel_h(), k.kernel_w(), stride)) {
    detail::direct_conv(x, k, out);
  } else {
    thread_local RowMatrix<Scalar> cols;
    const Index step = detail::conv_chunk_rows(taps, ow, oh);
    for (Index r0 = 0; r0 < oh; r0 += step) {
      const Index r1 = std::min(oh, r0 + step);
      detail::im2col_rows(x, k.kernel_h(), k.kernel_w(), stride, r0, r1, cols);
      out_mat.middleCols(r0 * ow, (r1 - r0) * ow).noalias() = w_mat * cols;
    }
  }
  if (k.has_bias()) out_mat.colwise() += k.bias.vec();
  return out;
}

template <typename Scalar>
struct ConvGradients {
  Tensor<Scalar> input;
  Tensor<Scalar> weights;
  Tensor<Scalar> bias;  // empty when the kernel has no bias
};

template <typename Scalar>
ConvGradients<Scalar> conv2d_vjp(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k,
                                 const Tensor<Scalar>& upstream, Index stride = 1,
                                 bool need_input_grad = true) {
  detail::require_conv_input(x, k, "conv2d_vjp");
  const Index oh = conv_out_extent(x.dim(1), k.kernel_h(), stride);
  const Index ow = conv_out_extent(x.dim(2), k.kernel_w(), stride);
  require_shape(upstream, {k.out_channels(), oh, ow}, "conv2d_vjp upstream");
  const Index taps = k.in_channels() * k.kernel_h() * k.kernel_w();
  const auto up = upstream.matrix(k.out_channels(), oh * ow);
  const auto w_mat = k.weights.matrix(k.out_channels(), taps);

  ConvGradients<Scalar> g;
  g.weights = Tensor<Scalar>(k.weights.shape());
  auto gw = g.weights.matrix(k.out_channels(), taps);
  if (k.has_bias()) g.bias = Tensor<Scalar>({k.out_channels()}, up.rowwise().sum());
  if (need_input_grad) g.input = Tensor<Scalar>(x.shape());

  if (k.kernel_h() == 1 && k.kernel_w() == 1 && stride == 1) {
    gw.noalias() = up * x.matrix(k.in_channels(), oh * ow).transpose();
    if (need_input_grad) {
      g.input.matrix(k.in_channels(), oh * ow).noalias() = w_mat.transpose() * up;
    }
    return g;
  }
  if (detail::use_direct_conv(k.out_channels(), k.kernel_h(), k.kernel_w(), stride)) {
    detail::direct_conv_vjp(x, k, upstream, g.weights, need_input_grad ? &g.input : nullptr);
    return g;
  }
  thread_local RowMatrix<Scalar> cols;
  thread_local RowMatrix<Scalar> dcols;
  const Index step = detail::conv_chunk_rows(taps, ow, oh);
  for (Index r0 = 0; r0 < oh; r0 += step) {
    const Index r1 = std::min(oh, r0 + step);
    const auto up_block = up.middleCols(r0 * ow, (r1 - r0) * ow);
    detail::im2col_rows(x, k.kernel_h(), k.kernel_w(), stride, r0, r1, cols);
    gw.noalias() += up_block * cols.transpose();
    if (need_input_grad) {
      dcols.noalias() = w_mat.transpose() * up_block;
      detail::col2im_rows(dcols, k.kernel_h(), k.kernel_w(), stride, r0, r1, g.input);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Weight modulation / demodulation.
// ---------------------------------------------------------------------------

/// w'_{j,i,k} = s_i w_{j,i,k} / sqrt(sum_{i,k} (s_i w_{j,i,k})^2 + eps),
/// normalized per output channel j. The bias is carried through unchanged.
template <typename Scalar>
ConvKernel<Scalar> modulate_weights(const ConvKernel<Scalar>& k, const ScaleVector<Scalar>& s,
                                    Scalar eps = Scalar(kDefaultDemodEps)) {
  if (s.size() != k.in_channels()) {
    throw DomainError("modulate_weights: " + std::to_string(s.size()) + " scales for " +
                      std::to_string(k.in_channels()) + " input channels");
  }
  if (eps < Scalar(0)) throw DomainError("modulate_weights: eps must be >= 0");
  const Index out_c = k.out_channels(), in_c = k.in_channels();
  const Index spatial = k.kernel_h() * k.kernel_w();
  using Block = Eigen::Map<RowMatrix<Scalar>>;
  using ConstBlock = Eigen::Map<const RowMatrix<Scalar>>;
  Tensor<Scalar> w(k.weights.shape());
  for (Index j = 0; j < out_c; ++j) {
    const Index offset = j * in_c * spatial;
    Block dst(w.data() + offset, in_c, spatial);
    dst.noalias() = s.scales.vec().asDiagonal() * ConstBlock(k.weights.data() + offset, in_c, spatial);
    const Scalar denom = std::sqrt(dst.squaredNorm() + eps);
    if (!(denom > Scalar(0))) {
      throw NumericError("modulate_weights: output channel " + std::to_string(j) +
                         " has zero norm and eps = 0");
    }
    dst /= denom;
  }
  return ConvKernel<Scalar>(std::move(w), k.bias);
}

template <typename Scalar>
Tensor<Scalar> modconv_forward(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k,
                               const ScaleVector<Scalar>& s,
                               Scalar eps = Scalar(kDefaultDemodEps)) {
  detail::require_conv_input(x, k, "modconv_forward");
  return conv2d(x, modulate_weights(k, s, eps));
}

template <typename Scalar>
struct ModConvGradients {
  Tensor<Scalar> input;
  Tensor<Scalar> weights;
  Tensor<Scalar> scales;
  Tensor<Scalar> bias;
};

/// Exact VJP through the convolution and the (de)modulation.
template <typename Scalar>
ModConvGradients<Scalar> modconv_vjp(const Tensor<Scalar>& x, const ConvKernel<Scalar>& k,
                                     const ScaleVector<Scalar>& s, Scalar eps,
                                     const Tensor<Scalar>& upstream,
                                     bool need_input_grad = true) {
  detail::require_conv_input(x, k, "modconv_vjp");
  const ConvKernel<Scalar> modulated = modulate_weights(k, s, eps);
  ConvGradients<Scalar> cg = conv2d_vjp(x, modulated, upstream, 1, need_input_grad);

  const Index out_c = k.out_channels(), in_c = k.in_channels();
  const Index spatial = k.kernel_h() * k.kernel_w();
  ModConvGradients<Scalar> g{std::move(cg.input), Tensor<Scalar>(k.weights.shape()),
                             Tensor<Scalar>({in_c}), std::move(cg.bias)};
  // With u = s ⊙ w and w' = u / n:  du = dw'/n - u (dw'·u) / n^3.
  using Block = Eigen::Map<RowMatrix<Scalar>>;
  using ConstBlock = Eigen::Map<const RowMatrix<Scalar>>;
  RowMatrix<Scalar> u, du;
  for (Index j = 0; j < out_c; ++j) {
    const Index base = j * in_c * spatial;
    const ConstBlock w(k.weights.data() + base, in_c, spatial);
    const ConstBlock dw_mod(cg.weights.data() + base, in_c, spatial);
    u.noalias() = s.scales.vec().asDiagonal() * w;
    const Scalar n = std::sqrt(u.squaredNorm() + eps);
    const Scalar coef = u.cwiseProduct(dw_mod).sum() / (n * n * n);
    du = dw_mod / n - coef * u;
    Block(g.weights.data() + base, in_c, spatial).noalias() = s.scales.vec().asDiagonal() * du;
    g.scales.vec() += du.cwiseProduct(w).rowwise().sum();
  }
  return g;
}

// ---------------------------------------------------------------------------
// Expression-driven scales.
// ---------------------------------------------------------------------------

/// s = 1 + 0.5 tanh(W f + b); s ≡ 1 when W f + b = 0.
template <typename Scalar>
ScaleVector<Scalar> expression_scales(const ExpressionFeature<Scalar>& f,
                                      const ScaleHead<Scalar>& head) {
  require_rank(head.weights, 2, "scale head weights");
  if (head.weights.dim(1) != f.size()) {
    throw DomainError("expression_scales: feature dimension " + std::to_string(f.size()) +
                      " does not match head input " + std::to_string(head.weights.dim(1)));
  }
  const Index n = head.weights.dim(0);
  require_shape(head.bias, {n}, "scale head bias");
  const auto z = (head.weights.matrix(n, f.size()) * f.vector.vec() + head.bias.vec()).eval();
  return ScaleVector<Scalar>(
      Tensor<Scalar>({n}, (Scalar(1) + Scalar(0.5) * z.array().tanh()).matrix().eval()));
}

template <typename Scalar>
ScaleHead<Scalar> expression_scales_vjp(const ExpressionFeature<Scalar>& f,
                                        const ScaleHead<Scalar>& head,
                                        const Tensor<Scalar>& grad_scales) {
  const Index n = head.weights.dim(0);
  require_shape(grad_scales, {n}, "expression_scales_vjp upstream");
  const auto z = (head.weights.matrix(n, f.size()) * f.vector.vec() + head.bias.vec()).eval();
  const auto th = z.array().tanh().eval();
  const auto dz = (grad_scales.vec().array() * Scalar(0.5) * (Scalar(1) - th * th)).matrix().eval();
  ScaleHead<Scalar> g{Tensor<Scalar>(head.weights.shape()), Tensor<Scalar>({n}, dz)};
  g.weights.matrix(n, f.size()).noalias() = dz * f.vector.vec().transpose();
  return g;
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities and resampling blocks.
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> leaky_relu(Tensor<Scalar> x, Scalar slope = Scalar(kLeakySlope)) {
  // max/min forms vectorize where a per-element select would branch.
  auto a = x.vec().array();
  if (slope <= Scalar(1)) {
    a = a.max(slope * a);
  } else {
    a = a.min(slope * a);
  }
  return x;
}

/// Gradient given the forward *input*.
template <typename Scalar>
Tensor<Scalar> leaky_relu_vjp(const Tensor<Scalar>& x, Tensor<Scalar> upstream,
                              Scalar slope = Scalar(kLeakySlope)) {
  upstream.vec().array() *=
      (x.vec().array() > Scalar(0)).template cast<Scalar>() * (Scalar(1) - slope) + slope;
  return upstream;
}

template <typename Scalar>
Tensor<Scalar> sigmoid(Tensor<Scalar> x) {
  x.vec() = (Scalar(1) + (-x.vec().array()).exp()).inverse().matrix();
  return x;
}

/// Gradient given the forward *output* y = sigmoid(x).
template <typename Scalar>
Tensor<Scalar> sigmoid_vjp(const Tensor<Scalar>& y, Tensor<Scalar> upstream) {
  upstream.vec().array() *= y.vec().array() * (Scalar(1) - y.vec().array());
  return upstream;
}

/// Doubles spatial extent by bilinear sampling on the finer align-corners lattice.
template <typename Scalar>
Tensor<Scalar> upsample2x(const Tensor<Scalar>& x) {
  require_rank(x, 3, "upsample2x");
  return bilinear_sample(x, FlowField<Scalar>(make_grid<Scalar>(2 * x.dim(1), 2 * x.dim(2)).coords));
}

template <typename Scalar>
Tensor<Scalar> upsample2x_vjp(const Tensor<Scalar>& x, const Tensor<Scalar>& upstream) {
  require_rank(x, 3, "upsample2x_vjp");
  const FlowField<Scalar> grid(make_grid<Scalar>(2 * x.dim(1), 2 * x.dim(2)).coords);
  return bilinear_sample_vjp(x, grid, upstream).input;
}

}  // namespace disco

#endif  // DISCO_MODCONV_HPP
