#ifndef DISCO_GEOMETRY_HPP
#define DISCO_GEOMETRY_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

#include "disco/errors.hpp"
#include "disco/tensor.hpp"

namespace disco {

template <typename Scalar>
using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Mat2 = Eigen::Matrix<Scalar, 2, 2>;
template <typename Scalar>
using Mat23 = Eigen::Matrix<Scalar, 2, 3>;
template <typename Scalar>
using PointMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, 2>;

inline constexpr double kDefaultCovarianceFloor = 1e-6;
inline constexpr double kHeatmapMassTolerance = 1e-9;
inline constexpr double kKeypointSeparation = 1e-9;
inline constexpr double kMinReciprocalCondition = 1e-12;

/// Probability mass over the normalized pixel lattice.
template <typename Scalar>
class Heatmap {
 public:
  /// `values` is [H,W]; must be nonnegative and sum to one.
  explicit Heatmap(Tensor<Scalar> values) : values_(std::move(values)) {
    require_rank(values_, 2, "heatmap");
    if (values_.empty()) throw DomainError("heatmap: empty");
    if (!values_.all_finite()) throw DomainError("heatmap: non-finite values");
    if ((values_.vec().array() < Scalar(0)).any()) throw DomainError("heatmap: negative mass");
    const Scalar total = values_.vec().sum();
    if (std::abs(total - Scalar(1)) > Scalar(kHeatmapMassTolerance)) {
      throw DomainError("heatmap: mass sums to " + std::to_string(double(total)) + ", not 1");
    }
    grid_ = make_grid<Scalar>(values_.dim(0), values_.dim(1));
  }

  /// Divides nonnegative weights by their total before validation.
  static Heatmap normalized(Tensor<Scalar> weights) {
    const Scalar total = weights.vec().sum();
    if (!(total > Scalar(0))) throw DomainError("heatmap: weights have no positive mass");
    weights.vec() /= total;
    return Heatmap(std::move(weights));
  }

  const Tensor<Scalar>& values() const { return values_; }
  const Grid2D<Scalar>& grid() const { return grid_; }
  Index height() const { return values_.dim(0); }
  Index width() const { return values_.dim(1); }

 private:
  Tensor<Scalar> values_;
  Grid2D<Scalar> grid_;
};

/// p -> linear * p + translation, over normalized coordinates.
template <typename Scalar>
struct Affine2D {
  Mat2<Scalar> linear = Mat2<Scalar>::Identity();
  Vec2<Scalar> translation = Vec2<Scalar>::Zero();

  static Affine2D identity() { return {}; }
  static Affine2D from_translation(Scalar tx, Scalar ty) {
    return {Mat2<Scalar>::Identity(), Vec2<Scalar>(tx, ty)};
  }

  Vec2<Scalar> operator()(const Vec2<Scalar>& p) const { return linear * p + translation; }

  Eigen::Matrix<Scalar, 3, 3> homogeneous() const {
    Eigen::Matrix<Scalar, 3, 3> m = Eigen::Matrix<Scalar, 3, 3>::Identity();
    m.template topLeftCorner<2, 2>() = linear;
    m.template topRightCorner<2, 1>() = translation;
    return m;
  }

  Affine2D inverse() const {
    const Scalar det = linear.determinant();
    if (!(std::abs(det) > Scalar(0)) || !std::isfinite(double(det))) {
      throw NumericError("affine transform has singular linear part");
    }
    const Mat2<Scalar> inv = linear.inverse();
    return {inv, -(inv * translation)};
  }

  /// (this ∘ other)(p) = this(other(p)).
  Affine2D compose(const Affine2D& other) const {
    return {linear * other.linear, linear * other.translation + translation};
  }
};

/// Named point sets in normalized coordinates; rows are (x, y).
template <typename Scalar>
class KeypointSet {
 public:
  explicit KeypointSet(PointMatrix<Scalar> points) : points_(std::move(points)) {
    if (points_.rows() < 3) {
      throw DomainError("keypoint set needs at least 3 points, got " +
                        std::to_string(points_.rows()));
    }
    if (!points_.allFinite()) throw DomainError("keypoint set has non-finite coordinates");
    for (Index i = 0; i < points_.rows(); ++i) {
      for (Index j = i + 1; j < points_.rows(); ++j) {
        if ((points_.row(i) - points_.row(j)).norm() <= Scalar(kKeypointSeparation)) {
          throw DomainError("keypoints " + std::to_string(i) + " and " + std::to_string(j) +
                            " coincide");
        }
      }
    }
  }

  Index size() const { return points_.rows(); }
  const PointMatrix<Scalar>& points() const { return points_; }
  Vec2<Scalar> point(Index i) const { return points_.row(i).transpose(); }

 private:
  PointMatrix<Scalar> points_;
};

/// Thin-plate spline mapping driving-frame coordinates to source-frame
/// coordinates: T(p) = A [p;1] + sum_i w_i phi(|anchor_i - p|).
template <typename Scalar>
struct TpsTransform {
  KeypointSet<Scalar> anchors;
  Mat23<Scalar> affine;         // columns act on (x, y, 1)
  PointMatrix<Scalar> weights;  // one row per anchor

  static TpsTransform identity(KeypointSet<Scalar> anchors) {
    Mat23<Scalar> a = Mat23<Scalar>::Zero();
    a.template leftCols<2>().setIdentity();
    PointMatrix<Scalar> w = PointMatrix<Scalar>::Zero(anchors.size(), 2);
    return {std::move(anchors), a, std::move(w)};
  }
};

// ---------------------------------------------------------------------------
// Affine predictor: moments of a heatmap.
// ---------------------------------------------------------------------------

/// t = sum_z H(z) z.
template <typename Scalar>
Vec2<Scalar> heatmap_translation(const Heatmap<Scalar>& h) {
  const auto& v = h.values();
  const auto& g = h.grid();
  Vec2<Scalar> t = Vec2<Scalar>::Zero();
  for (Index r = 0; r < h.height(); ++r) {
    for (Index c = 0; c < h.width(); ++c) {
      t.x() += v(r, c) * g.x(r, c);
      t.y() += v(r, c) * g.y(r, c);
    }
  }
  return t;
}

/// sum_z H(z) (z - t)(z - t)^T about the given mean.
template <typename Scalar>
Mat2<Scalar> heatmap_covariance(const Heatmap<Scalar>& h, const Vec2<Scalar>& mean) {
  const auto& v = h.values();
  const auto& g = h.grid();
  Mat2<Scalar> cov = Mat2<Scalar>::Zero();
  for (Index r = 0; r < h.height(); ++r) {
    for (Index c = 0; c < h.width(); ++c) {
      const Vec2<Scalar> d(g.x(r, c) - mean.x(), g.y(r, c) - mean.y());
      cov.noalias() += v(r, c) * d * d.transpose();
    }
  }
  return cov;
}

/// Flips each column so its largest-magnitude entry is positive. Ties go to
/// the first row.
template <typename Scalar>
Mat2<Scalar> canonicalize_signs(Mat2<Scalar> u) {
  for (Index col = 0; col < 2; ++col) {
    Index pivot = 0;
    if (std::abs(u(1, col)) > std::abs(u(0, col))) pivot = 1;
    if (u(pivot, col) < Scalar(0)) u.col(col) = -u.col(col);
  }
  return u;
}

/// Principal-axis affine of a heatmap: linear = U Σ^{1/2} from the SVD of the
/// floored covariance, translation = heatmap mean. Singular values are
/// descending; U columns are sign-canonicalized.
template <typename Scalar>
Affine2D<Scalar> heatmap_to_affine(const Heatmap<Scalar>& h,
                                   Scalar eps_cov = Scalar(kDefaultCovarianceFloor)) {
  if (!(eps_cov > Scalar(0))) throw DomainError("heatmap_to_affine: eps_cov must be > 0");
  const Vec2<Scalar> t = heatmap_translation(h);
  const Mat2<Scalar> cov = heatmap_covariance(h, t) + eps_cov * Mat2<Scalar>::Identity();
  if (!cov.allFinite()) throw NumericError("heatmap_to_affine: non-finite covariance");

  Eigen::JacobiSVD<Mat2<Scalar>> svd(cov, Eigen::ComputeFullU);
  const Mat2<Scalar> u = canonicalize_signs<Scalar>(svd.matrixU());
  const Vec2<Scalar> root = svd.singularValues().cwiseSqrt();
  return {u * root.asDiagonal(), t};
}

/// A_{S<-D} = A_{S<-R} * A_{D<-R}^{-1}.
template <typename Scalar>
Affine2D<Scalar> relative_affine(const Affine2D<Scalar>& src, const Affine2D<Scalar>& drv) {
  return src.compose(drv.inverse());
}

// ---------------------------------------------------------------------------
// TPS predictor.
// ---------------------------------------------------------------------------

/// phi(r) = r^2 log r^2, with phi(0) = 0.
template <typename Scalar>
Scalar tps_radial(Scalar r) {
  if (r <= Scalar(0)) return Scalar(0);
  const Scalar r2 = r * r;
  return r2 * std::log(r2);
}

/// Same kernel evaluated from a squared distance.
template <typename Scalar>
Scalar tps_radial_sq(Scalar r2) {
  if (r2 <= Scalar(0)) return Scalar(0);
  return r2 * std::log(r2);
}

/// Fits the minimum-bending-energy spline with T(driving_i) = source_i
/// (exactly when reg = 0, smoothed otherwise). Solves the bordered system
///   [K + reg I  P] [W]   [Y]
///   [P^T        0] [A] = [0]
/// with P rows (1, x, y), which also imposes sum w = 0 and sum w p^T = 0.
template <typename Scalar>
TpsTransform<Scalar> tps_fit(const KeypointSet<Scalar>& driving, const KeypointSet<Scalar>& source,
                             Scalar reg = Scalar(0)) {
  const Index n = driving.size();
  if (source.size() != n) {
    throw DomainError("tps_fit: keypoint count mismatch (" + std::to_string(n) + " driving vs " +
                      std::to_string(source.size()) + " source)");
  }
  if (reg < Scalar(0)) throw DomainError("tps_fit: reg must be >= 0");

  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const auto& pd = driving.points();
  Matrix system = Matrix::Zero(n + 3, n + 3);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      system(i, j) = tps_radial_sq<Scalar>((pd.row(i) - pd.row(j)).squaredNorm());
    }
    system(i, i) += reg;
    system(i, n) = system(n, i) = Scalar(1);
    system(i, n + 1) = system(n + 1, i) = pd(i, 0);
    system(i, n + 2) = system(n + 2, i) = pd(i, 1);
  }
  Matrix rhs = Matrix::Zero(n + 3, 2);
  rhs.topRows(n) = source.points();

  Eigen::PartialPivLU<Matrix> lu(system);
  // The rcond estimator can miss an exactly zero pivot, so the pivot spread is checked too.
  const auto pivots = lu.matrixLU().diagonal().cwiseAbs();
  const Scalar rcond = std::min(lu.rcond(), pivots.minCoeff() / pivots.maxCoeff());
  if (!(rcond >= Scalar(kMinReciprocalCondition))) {
    throw DomainError("tps_fit: singular system (reciprocal condition " +
                      std::to_string(double(rcond)) +
                      "); driving keypoints may be collinear or nearly coincident");
  }
  const Matrix coef = lu.solve(rhs);

  Mat23<Scalar> affine;
  affine.col(0) = coef.row(n + 1).transpose();
  affine.col(1) = coef.row(n + 2).transpose();
  affine.col(2) = coef.row(n).transpose();
  return {driving, affine, coef.topRows(n)};
}

template <typename Scalar>
Vec2<Scalar> tps_eval(const TpsTransform<Scalar>& t, const Vec2<Scalar>& p) {
  Vec2<Scalar> out = t.affine.template leftCols<2>() * p + t.affine.col(2);
  const auto& anchors = t.anchors.points();
  for (Index i = 0; i < anchors.rows(); ++i) {
    const Scalar dx = anchors(i, 0) - p.x(), dy = anchors(i, 1) - p.y();
    const Scalar phi = tps_radial_sq(dx * dx + dy * dy);
    out.x() += t.weights(i, 0) * phi;
    out.y() += t.weights(i, 1) * phi;
  }
  return out;
}

/// Largest absolute entry of sum_i w_i and sum_i w_i p_i^T.
template <typename Scalar>
Scalar tps_side_condition_residual(const TpsTransform<Scalar>& t) {
  const auto& p = t.anchors.points();
  const Vec2<Scalar> sum = t.weights.colwise().sum().transpose();
  const Mat2<Scalar> moment = t.weights.transpose() * p;
  return std::max(sum.cwiseAbs().maxCoeff(), moment.cwiseAbs().maxCoeff());
}

}  // namespace disco

#endif  // DISCO_GEOMETRY_HPP
