#ifndef DISCO_SYNTHBENCH_HPP
#define DISCO_SYNTHBENCH_HPP

#include <cstdint>
#include <array>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "disco/flow.hpp"
#include "disco/geometry.hpp"
#include "disco/modconv.hpp"
#include "disco/tensor.hpp"

namespace disco {

/// mt19937_64 with hand-written mappings to doubles, so draws do not depend
/// on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  std::uint64_t next_u64();
  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  double normal();                       // Box-Muller, no cached pair
  Index index(Index n);                  // [0, n)

 private:
  std::mt19937_64 engine_;
};

struct SceneSpec {
  Index size = 64;
  TransformKind transform = TransformKind::affine;
  double max_rotation_deg = 12.0;
  double min_scale = 0.9;
  double max_scale = 1.1;
  double max_translation = 0.12;
  double keypoint_jitter = 0.04;  // extra non-rigid motion for TPS scenes
  Index expression_dim = 16;
  bool zero_motion = false;  // identical pose and expression in both frames
  std::optional<Vec2<double>> fixed_translation;  // forces a translation-only motion

  void validate() const;
};

/// Gaussian blob composited over the canvas; covariance in normalized units.
struct Blob {
  Vec2<double> center;
  Mat2<double> covariance;
  Eigen::Vector3d color;
  double opacity;
};

enum class Region { face, eyes, mouth };

/// A toy face: a background plus ordered blobs. Eye and mouth opacity are
/// the expression-controlled appearance factors.
struct FaceModel {
  Eigen::Vector3d background;
  Blob face;
  Blob left_eye;
  Blob right_eye;
  Blob mouth;
  Blob accent;

  std::vector<Blob> blobs(double eye_openness, double mouth_openness) const;
};

struct Expression {
  double eye_openness;
  double mouth_openness;
};

/// Audio-like half (mouth) followed by eye half, each a fixed direction
/// scaled by (2 openness - 1).
ExpressionFeature<double> encode_expression(const Expression& e, Index dim);

struct SyntheticScene {
  std::uint64_t seed;
  SceneSpec spec;
  FaceModel face;
  Expression source_expression;
  Expression driving_expression;
  TensorD source;
  TensorD driving;
  Transform transform;          // driving -> source backward map
  Affine2D<double> forward_similarity;  // source -> driving rigid motion
  Heatmap<double> source_heatmap;
  Heatmap<double> driving_heatmap;
  KeypointSet<double> source_keypoints;
  KeypointSet<double> driving_keypoints;
  ExpressionFeature<double> expression;
};

/// Renders `blobs` at p = warp(lattice point) for every pixel of a size×size canvas.
TensorD render_face(const Eigen::Vector3d& background, const std::vector<Blob>& blobs, Index size,
                    const Transform& warp);

SyntheticScene render_scene(std::uint64_t seed, const SceneSpec& spec);

/// Same scene with the driving expression replaced (pose unchanged).
TensorD render_driving(const SyntheticScene& scene, const Expression& expression);

/// Pixels where the given facial part dominates the driving frame.
Tensor<double> region_mask(const SyntheticScene& scene, Region region, double threshold = 0.2);

/// Discretized anisotropic Gaussian heatmap on a size×size lattice.
Heatmap<double> gaussian_heatmap(const Vec2<double>& mean, const Mat2<double>& covariance,
                                 Index size);

// ---------------------------------------------------------------------------
// Independent oracles.
// ---------------------------------------------------------------------------

struct Moments {
  Vec2<double> mean;
  Mat2<double> covariance;
};

/// First and second moments by a direct double loop over pixel indices.
Moments moment_oracle(const Heatmap<double>& h);

struct TpsOracleSolution {
  std::vector<std::array<double, 2>> weights;
  std::array<std::array<double, 3>, 2> affine;  // rows x', y'; columns (x, y, 1)
};

/// Plain Gaussian elimination with partial pivoting on the interpolation
/// system, assembled from scratch.
TpsOracleSolution tps_dense_oracle(const std::vector<std::array<double, 2>>& driving,
                                   const std::vector<std::array<double, 2>>& source, double reg);

/// Direct scalar evaluation of the spline sum.
std::array<double, 2> tps_scalar_eval(const std::vector<std::array<double, 2>>& anchors,
                                      const TpsOracleSolution& coef, double x, double y);

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

inline constexpr double kPsnrCap = 99.0;

double psnr(const TensorD& a, const TensorD& b, double peak = 1.0);

/// Mean SSIM over all valid 7×7 windows of every channel (uniform window,
/// K1 = 0.01, K2 = 0.03, peak 1).
double ssim(const TensorD& a, const TensorD& b);

/// PSNR restricted to the central fraction of the image.
double interior_psnr(const TensorD& a, const TensorD& b, double fraction = 0.8,
                     double peak = 1.0);

TensorD crop_center(const TensorD& t, double fraction);

}  // namespace disco

#endif  // DISCO_SYNTHBENCH_HPP
