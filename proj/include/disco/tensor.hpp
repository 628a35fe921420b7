#ifndef DISCO_TENSOR_HPP
#define DISCO_TENSOR_HPP

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "disco/errors.hpp"

namespace disco {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major array of real scalars; innermost axis last.
///
/// Images, feature maps, flows and kernels are all stored channels-first:
/// an image is [C,H,W], a conv kernel [outC,inC,kH,kW].
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Plane = Eigen::Map<RowMatrix<Scalar>>;
  using ConstPlane = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    data_.setConstant(checked_size(shape_), fill);
  }

  Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_size(shape_)) {
      throw DomainError("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Vector& vec() { return data_; }
  const Vector& vec() const { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& operator()(Index c, Index y, Index x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  Scalar operator()(Index c, Index y, Index x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  Scalar& operator()(Index y, Index x) { return data_[y * shape_[1] + x]; }
  Scalar operator()(Index y, Index x) const { return data_[y * shape_[1] + x]; }

  /// Row-major matrix view over the whole buffer.
  Plane matrix(Index rows, Index cols) {
    require_reshape(rows, cols);
    return Plane(data_.data(), rows, cols);
  }
  ConstPlane matrix(Index rows, Index cols) const {
    require_reshape(rows, cols);
    return ConstPlane(data_.data(), rows, cols);
  }

  /// [H,W] view of channel `c` of a [C,H,W] tensor.
  Plane plane(Index c) {
    return Plane(data_.data() + c * shape_[1] * shape_[2], shape_[1], shape_[2]);
  }
  ConstPlane plane(Index c) const {
    return ConstPlane(data_.data() + c * shape_[1] * shape_[2], shape_[1], shape_[2]);
  }

  Tensor reshaped(Shape shape) const {
    if (checked_size(shape) != size()) {
      throw DomainError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static Index checked_size(const Shape& shape) {
    Index n = 1;
    for (Index e : shape) {
      if (e < 0) throw DomainError("negative extent in shape " + shape_string(shape));
      n *= e;
    }
    return n;
  }

  void require_reshape(Index rows, Index cols) const {
    if (rows * cols != size()) {
      throw DomainError("cannot view " + shape_string(shape_) + " as " + std::to_string(rows) +
                        "x" + std::to_string(cols));
    }
  }

  Shape shape_;
  Vector data_;
};

using TensorD = Tensor<double>;

template <typename Scalar>
void require_shape(const Tensor<Scalar>& t, const Shape& shape, const char* what) {
  if (t.shape() != shape) {
    throw DomainError(std::string(what) + ": expected shape " + shape_string(shape) + ", got " +
                      shape_string(t.shape()));
  }
}

template <typename Scalar>
void require_rank(const Tensor<Scalar>& t, Index rank, const char* what) {
  if (t.rank() != rank) {
    throw DomainError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                      shape_string(t.shape()));
  }
}

template <typename Scalar>
void require_finite(const Tensor<Scalar>& t, const std::string& what) {
  if (!t.all_finite()) throw NumericError(what + " contains non-finite values");
}

/// Normalized coordinate of pixel `i` along an axis with `n` pixels
/// (align-corners: pixel 0 -> -1, pixel n-1 -> +1, single pixel -> 0).
template <typename Scalar = double>
Scalar normalized_coord(Index i, Index n) {
  if (n <= 1) return Scalar(0);
  return Scalar(-1) + Scalar(2) * Scalar(i) / Scalar(n - 1);
}

/// Normalized pixel-center lattice, coords [2,H,W] holding (x, y).
template <typename Scalar>
struct Grid2D {
  Index height = 0;
  Index width = 0;
  Tensor<Scalar> coords;

  Scalar x(Index row, Index col) const { return coords(0, row, col); }
  Scalar y(Index row, Index col) const { return coords(1, row, col); }
};

template <typename Scalar = double>
Grid2D<Scalar> make_grid(Index height, Index width) {
  if (height < 1 || width < 1) {
    throw DomainError("make_grid: extents must be >= 1, got " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
  Grid2D<Scalar> grid{height, width, Tensor<Scalar>({2, height, width})};
  for (Index r = 0; r < height; ++r) {
    const Scalar y = normalized_coord<Scalar>(r, height);
    for (Index c = 0; c < width; ++c) {
      grid.coords(0, r, c) = normalized_coord<Scalar>(c, width);
      grid.coords(1, r, c) = y;
    }
  }
  return grid;
}

/// Backward flow: for every output pixel, the normalized (x, y) source
/// coordinate to sample from. Stored as [2,H,W] absolute coordinates.
template <typename Scalar>
struct FlowField {
  Tensor<Scalar> coords;

  FlowField() = default;
  explicit FlowField(Tensor<Scalar> c) : coords(std::move(c)) {
    if (coords.rank() != 3 || coords.dim(0) != 2) {
      throw DomainError("flow field must have shape [2,H,W], got " + shape_string(coords.shape()));
    }
    require_finite(coords, "flow field");
  }
  FlowField(Index height, Index width) : coords({2, height, width}) {}

  Index height() const { return coords.dim(1); }
  Index width() const { return coords.dim(2); }
  Scalar& x(Index r, Index c) { return coords(0, r, c); }
  Scalar& y(Index r, Index c) { return coords(1, r, c); }
  Scalar x(Index r, Index c) const { return coords(0, r, c); }
  Scalar y(Index r, Index c) const { return coords(1, r, c); }

  friend bool operator==(const FlowField& a, const FlowField& b) { return a.coords == b.coords; }
};

using FlowFieldD = FlowField<double>;

namespace detail {

/// Bilinear footprint along one axis: border-clamped source position split
/// into a base index, its neighbour, the fractional weight, and the slope
/// d(pixel position)/d(normalized coordinate), zero where the clamp is active.
template <typename Scalar>
struct AxisTap {
  Index i0;
  Index i1;
  Scalar frac;
  Scalar slope;
};

template <typename Scalar>
AxisTap<Scalar> axis_tap(Scalar coord, Index n) {
  if (n == 1) return {0, 0, Scalar(0), Scalar(0)};
  const Scalar half_span = Scalar(n - 1) / Scalar(2);
  Scalar slope = half_span;
  if (coord <= Scalar(-1)) {
    coord = Scalar(-1);
    slope = Scalar(0);
  } else if (coord >= Scalar(1)) {
    coord = Scalar(1);
    slope = Scalar(0);
  }
  Scalar u = (coord + Scalar(1)) * half_span;
  // Lattice coordinates such as -1 + 2/3 do not round-trip exactly; snapping
  // within a few ulps keeps identity sampling exact.
  const Scalar nearest = std::nearbyint(u);
  const Scalar tol = Scalar(8) * std::numeric_limits<Scalar>::epsilon() * std::max(Scalar(1), nearest);
  if (std::abs(u - nearest) <= tol) u = nearest;
  Index i0 = static_cast<Index>(std::floor(u));
  i0 = std::clamp<Index>(i0, 0, n - 2);
  return {i0, i0 + 1, u - Scalar(i0), slope};
}

}  // namespace detail

/// Samples `input` [C,H,W] at the normalized coordinates of `coords`,
/// producing [C,H',W']. Coordinates outside [-1,1] clamp to the border.
template <typename Scalar>
Tensor<Scalar> bilinear_sample(const Tensor<Scalar>& input, const FlowField<Scalar>& coords) {
  require_rank(input, 3, "bilinear_sample input");
  if (input.empty()) throw DomainError("bilinear_sample: empty input");
  const Index channels = input.dim(0), in_h = input.dim(1), in_w = input.dim(2);
  const Index out_h = coords.height(), out_w = coords.width();
  Tensor<Scalar> out({channels, out_h, out_w});
  const Index in_plane = in_h * in_w, out_plane = out_h * out_w;
  for (Index r = 0; r < out_h; ++r) {
    for (Index c = 0; c < out_w; ++c) {
      const auto tx = detail::axis_tap(coords.x(r, c), in_w);
      const auto ty = detail::axis_tap(coords.y(r, c), in_h);
      const Scalar w00 = (1 - tx.frac) * (1 - ty.frac), w01 = tx.frac * (1 - ty.frac);
      const Scalar w10 = (1 - tx.frac) * ty.frac, w11 = tx.frac * ty.frac;
      const Index o00 = ty.i0 * in_w + tx.i0, o01 = ty.i0 * in_w + tx.i1;
      const Index o10 = ty.i1 * in_w + tx.i0, o11 = ty.i1 * in_w + tx.i1;
      const Scalar* src = input.data();
      Scalar* dst = out.data() + r * out_w + c;
      for (Index ch = 0; ch < channels; ++ch, src += in_plane, dst += out_plane) {
        *dst = w00 * src[o00] + w01 * src[o01] + w10 * src[o10] + w11 * src[o11];
      }
    }
  }
  return out;
}

template <typename Scalar>
struct SampleGradients {
  Tensor<Scalar> input;
  FlowField<Scalar> coords;
};

/// Vector-Jacobian products of bilinear_sample with respect to both the
/// sampled tensor and the sampling coordinates.
template <typename Scalar>
SampleGradients<Scalar> bilinear_sample_vjp(const Tensor<Scalar>& input,
                                            const FlowField<Scalar>& coords,
                                            const Tensor<Scalar>& upstream) {
  require_rank(input, 3, "bilinear_sample_vjp input");
  if (input.empty()) throw DomainError("bilinear_sample_vjp: empty input");
  const Index channels = input.dim(0), in_h = input.dim(1), in_w = input.dim(2);
  const Index out_h = coords.height(), out_w = coords.width();
  require_shape(upstream, {channels, out_h, out_w}, "bilinear_sample_vjp upstream");

  SampleGradients<Scalar> grads{Tensor<Scalar>(input.shape()), FlowField<Scalar>(out_h, out_w)};
  const Index in_plane = in_h * in_w, out_plane = out_h * out_w;
  for (Index r = 0; r < out_h; ++r) {
    for (Index c = 0; c < out_w; ++c) {
      const auto tx = detail::axis_tap(coords.x(r, c), in_w);
      const auto ty = detail::axis_tap(coords.y(r, c), in_h);
      const Scalar w00 = (1 - tx.frac) * (1 - ty.frac), w01 = tx.frac * (1 - ty.frac);
      const Scalar w10 = (1 - tx.frac) * ty.frac, w11 = tx.frac * ty.frac;
      const Index o00 = ty.i0 * in_w + tx.i0, o01 = ty.i0 * in_w + tx.i1;
      const Index o10 = ty.i1 * in_w + tx.i0, o11 = ty.i1 * in_w + tx.i1;
      Scalar gx = 0, gy = 0;
      const Scalar* src = input.data();
      const Scalar* up = upstream.data() + r * out_w + c;
      Scalar* gin = grads.input.data();
      for (Index ch = 0; ch < channels; ++ch, src += in_plane, gin += in_plane, up += out_plane) {
        const Scalar g = *up;
        gin[o00] += w00 * g;
        gin[o01] += w01 * g;
        gin[o10] += w10 * g;
        gin[o11] += w11 * g;
        gx += g * ((1 - ty.frac) * (src[o01] - src[o00]) + ty.frac * (src[o11] - src[o10]));
        gy += g * ((1 - tx.frac) * (src[o10] - src[o00]) + tx.frac * (src[o11] - src[o01]));
      }
      grads.coords.x(r, c) = gx * tx.slope;
      grads.coords.y(r, c) = gy * ty.slope;
    }
  }
  return grads;
}

}  // namespace disco

#endif  // DISCO_TENSOR_HPP
