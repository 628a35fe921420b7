#ifndef DISCO_FLOW_HPP
#define DISCO_FLOW_HPP

#include <algorithm>
#include <string>
#include <variant>

#include "disco/errors.hpp"
#include "disco/geometry.hpp"
#include "disco/tensor.hpp"

namespace disco {

namespace detail {

template <typename Scalar>
void require_unit_interval(const Tensor<Scalar>& t, const char* what) {
  if (!t.all_finite()) throw DomainError(std::string(what) + ": non-finite values");
  if ((t.vec().array() < Scalar(0)).any() || (t.vec().array() > Scalar(1)).any()) {
    throw DomainError(std::string(what) + ": values must lie in [0, 1]");
  }
}

}  // namespace detail

/// Per-pixel weight [H,W] on the coarse flow.
template <typename Scalar>
class MotionMask {
 public:
  explicit MotionMask(Tensor<Scalar> values) : values_(std::move(values)) {
    require_rank(values_, 2, "motion mask");
    detail::require_unit_interval(values_, "motion mask");
  }
  static MotionMask constant(Index height, Index width, Scalar value) {
    return MotionMask(Tensor<Scalar>({height, width}, value));
  }

  const Tensor<Scalar>& values() const { return values_; }
  Index height() const { return values_.dim(0); }
  Index width() const { return values_.dim(1); }

 private:
  Tensor<Scalar> values_;
};

/// Gate in [0,1], either [1,H,W] (broadcast over channels) or [C,H,W].
template <typename Scalar>
class ConfidenceMap {
 public:
  explicit ConfidenceMap(Tensor<Scalar> values) : values_(std::move(values)) {
    require_rank(values_, 3, "confidence map");
    detail::require_unit_interval(values_, "confidence map");
  }
  static ConfidenceMap constant(Index height, Index width, Scalar value) {
    return ConfidenceMap(Tensor<Scalar>({1, height, width}, value));
  }

  const Tensor<Scalar>& values() const { return values_; }
  Index channels() const { return values_.dim(0); }
  Index height() const { return values_.dim(1); }
  Index width() const { return values_.dim(2); }

 private:
  Tensor<Scalar> values_;
};

template <typename Scalar = double>
FlowField<Scalar> identity_flow(Index height, Index width) {
  return FlowField<Scalar>(make_grid<Scalar>(height, width).coords);
}

/// coords(p) = linear * p + translation at every lattice point.
template <typename Scalar>
FlowField<Scalar> coarse_flow_affine(const Affine2D<Scalar>& t, Index height, Index width) {
  const auto grid = make_grid<Scalar>(height, width);
  FlowField<Scalar> flow(height, width);
  for (Index r = 0; r < height; ++r) {
    for (Index c = 0; c < width; ++c) {
      const Scalar x = grid.x(r, c), y = grid.y(r, c);
      flow.x(r, c) = t.linear(0, 0) * x + t.linear(0, 1) * y + t.translation.x();
      flow.y(r, c) = t.linear(1, 0) * x + t.linear(1, 1) * y + t.translation.y();
    }
  }
  require_finite(flow.coords, "coarse affine flow");
  return flow;
}

template <typename Scalar>
FlowField<Scalar> coarse_flow_tps(const TpsTransform<Scalar>& t, Index height, Index width) {
  const auto grid = make_grid<Scalar>(height, width);
  FlowField<Scalar> flow(height, width);
  for (Index r = 0; r < height; ++r) {
    for (Index c = 0; c < width; ++c) {
      const Vec2<Scalar> q = tps_eval(t, Vec2<Scalar>(grid.x(r, c), grid.y(r, c)));
      flow.x(r, c) = q.x();
      flow.y(r, c) = q.y();
    }
  }
  require_finite(flow.coords, "coarse TPS flow");
  return flow;
}

/// O_P = (1 - M) ∘ O_I + M ∘ O_T.
template <typename Scalar>
FlowField<Scalar> compose_flow(const MotionMask<Scalar>& m, const FlowField<Scalar>& identity,
                               const FlowField<Scalar>& coarse) {
  if (identity.coords.shape() != coarse.coords.shape() || m.height() != identity.height() ||
      m.width() != identity.width()) {
    throw DomainError("compose_flow: shape mismatch (mask " + shape_string(m.values().shape()) +
                      ", identity " + shape_string(identity.coords.shape()) + ", coarse " +
                      shape_string(coarse.coords.shape()) + ")");
  }
  FlowField<Scalar> out(identity.height(), identity.width());
  const Index plane = identity.height() * identity.width();
  const Scalar* w = m.values().data();
  for (Index ch = 0; ch < 2; ++ch) {
    const Scalar* a = identity.coords.data() + ch * plane;
    const Scalar* b = coarse.coords.data() + ch * plane;
    Scalar* o = out.coords.data() + ch * plane;
    for (Index i = 0; i < plane; ++i) {
      // The clamp only absorbs rounding so the result never leaves [a, b].
      const Scalar v = (Scalar(1) - w[i]) * a[i] + w[i] * b[i];
      o[i] = std::clamp(v, std::min(a[i], b[i]), std::max(a[i], b[i]));
    }
  }
  return out;
}

/// Backward warp F_A = Warp(F, O); output takes the flow's spatial extent.
template <typename Scalar>
Tensor<Scalar> warp_features(const Tensor<Scalar>& features, const FlowField<Scalar>& flow) {
  require_rank(features, 3, "warp_features");
  if (features.dim(1) != flow.height() || features.dim(2) != flow.width()) {
    throw DomainError("warp_features: feature extent " + shape_string(features.shape()) +
                      " does not match flow " + shape_string(flow.coords.shape()));
  }
  return bilinear_sample(features, flow);
}

/// E = C ∘ F_A, broadcasting a single-channel C across feature channels.
template <typename Scalar>
Tensor<Scalar> apply_confidence(const ConfidenceMap<Scalar>& c, const Tensor<Scalar>& features) {
  require_rank(features, 3, "apply_confidence features");
  const Index channels = features.dim(0);
  if (c.height() != features.dim(1) || c.width() != features.dim(2) ||
      (c.channels() != 1 && c.channels() != channels)) {
    throw DomainError("apply_confidence: confidence " + shape_string(c.values().shape()) +
                      " does not broadcast to " + shape_string(features.shape()));
  }
  Tensor<Scalar> out(features.shape());
  const Index plane = features.dim(1) * features.dim(2);
  for (Index ch = 0; ch < channels; ++ch) {
    const Index cc = c.channels() == 1 ? 0 : ch;
    out.vec().segment(ch * plane, plane) =
        c.values().vec().segment(cc * plane, plane).cwiseProduct(
            features.vec().segment(ch * plane, plane));
  }
  return out;
}

enum class TransformKind { affine, tps };

/// Either head-motion transform, always as a driving -> source backward map.
using Transform = std::variant<Affine2D<double>, TpsTransform<double>>;

inline std::string to_string(TransformKind kind) {
  return kind == TransformKind::affine ? "affine" : "tps";
}

inline TransformKind transform_kind_from_string(const std::string& name) {
  if (name == "affine") return TransformKind::affine;
  if (name == "tps") return TransformKind::tps;
  throw DomainError("unknown transform kind '" + name + "' (expected affine or tps)");
}

inline TransformKind kind_of(const Transform& t) {
  return std::holds_alternative<Affine2D<double>>(t) ? TransformKind::affine : TransformKind::tps;
}

inline Vec2<double> apply_transform(const Transform& t, const Vec2<double>& p) {
  if (const auto* a = std::get_if<Affine2D<double>>(&t)) return (*a)(p);
  return tps_eval(std::get<TpsTransform<double>>(t), p);
}

inline FlowFieldD coarse_flow(const Transform& t, Index height, Index width) {
  if (const auto* a = std::get_if<Affine2D<double>>(&t)) return coarse_flow_affine(*a, height, width);
  return coarse_flow_tps(std::get<TpsTransform<double>>(t), height, width);
}

}  // namespace disco

#endif  // DISCO_FLOW_HPP
