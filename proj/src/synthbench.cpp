#include "disco/synthbench.hpp"

#include <cmath>
#include <numbers>

namespace disco {

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Index Rng::index(Index n) { return static_cast<Index>(next_u64() % std::uint64_t(n)); }

void SceneSpec::validate() const {
  if (size < 8) throw DomainError("scene spec: size must be >= 8");
  if (!(max_rotation_deg >= 0.0 && max_rotation_deg <= 90.0)) {
    throw DomainError("scene spec: max_rotation_deg must lie in [0, 90]");
  }
  if (!(min_scale > 0.0 && min_scale <= max_scale)) {
    throw DomainError("scene spec: need 0 < min_scale <= max_scale");
  }
  if (!(max_translation >= 0.0 && max_translation <= 1.0)) {
    throw DomainError("scene spec: max_translation must lie in [0, 1]");
  }
  if (!(keypoint_jitter >= 0.0 && keypoint_jitter <= 0.2)) {
    throw DomainError("scene spec: keypoint_jitter must lie in [0, 0.2]");
  }
  if (expression_dim < 2 || expression_dim % 2 != 0) {
    throw DomainError("scene spec: expression_dim must be even and >= 2");
  }
}

namespace {

Mat2<double> rotation(double radians) {
  Mat2<double> r;
  r << std::cos(radians), -std::sin(radians), std::sin(radians), std::cos(radians);
  return r;
}

Mat2<double> oriented_covariance(double sigma_major, double sigma_minor, double radians) {
  const Mat2<double> r = rotation(radians);
  return r * Vec2<double>(sigma_major * sigma_major, sigma_minor * sigma_minor).asDiagonal() *
         r.transpose();
}

double blob_density(const Blob& b, const Vec2<double>& p) {
  const Vec2<double> d = p - b.center;
  return std::exp(-0.5 * d.dot(b.covariance.inverse() * d));
}

FaceModel random_face(Rng& rng) {
  FaceModel f;
  f.background = Eigen::Vector3d(rng.uniform(0.05, 0.25), rng.uniform(0.05, 0.25),
                                 rng.uniform(0.1, 0.3));
  const Vec2<double> center(rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08));
  const double tilt = rng.uniform(-0.15, 0.15);
  const double sx = rng.uniform(0.28, 0.34), sy = rng.uniform(0.36, 0.42);
  f.face = {center, oriented_covariance(sy, sx, std::numbers::pi / 2 + tilt),
            Eigen::Vector3d(rng.uniform(0.6, 0.9), rng.uniform(0.45, 0.7), rng.uniform(0.35, 0.6)),
            0.95};

  const Mat2<double> r = rotation(tilt);
  const double eye_dx = rng.uniform(0.13, 0.17), eye_dy = rng.uniform(-0.14, -0.10);
  const double eye_sigma = rng.uniform(0.065, 0.08);
  const Eigen::Vector3d eye_color(rng.uniform(0.02, 0.15), rng.uniform(0.02, 0.15),
                                  rng.uniform(0.05, 0.25));
  f.left_eye = {center + r * Vec2<double>(-eye_dx, eye_dy),
                oriented_covariance(eye_sigma, eye_sigma * 0.8, tilt), eye_color, 0.0};
  f.right_eye = {center + r * Vec2<double>(eye_dx, eye_dy),
                 oriented_covariance(eye_sigma, eye_sigma * 0.8, tilt), eye_color, 0.0};
  f.mouth = {center + r * Vec2<double>(rng.uniform(-0.02, 0.02), rng.uniform(0.16, 0.2)),
             oriented_covariance(rng.uniform(0.1, 0.13), 0.055, tilt),
             Eigen::Vector3d(rng.uniform(0.5, 0.8), rng.uniform(0.05, 0.2), rng.uniform(0.1, 0.25)),
             0.0};
  f.accent = {center + r * Vec2<double>(rng.uniform(-0.15, 0.15), rng.uniform(-0.36, -0.3)),
              oriented_covariance(rng.uniform(0.16, 0.22), rng.uniform(0.08, 0.11),
                                  rng.uniform(-0.3, 0.3)),
              Eigen::Vector3d(rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.4), rng.uniform(0.05, 0.3)),
              0.9};
  return f;
}

Expression random_expression(Rng& rng) { return {rng.uniform(), rng.uniform()}; }

}  // namespace

std::vector<Blob> FaceModel::blobs(double eye_openness, double mouth_openness) const {
  const double eye_opacity = 0.1 + 0.85 * eye_openness;
  const double mouth_opacity = 0.1 + 0.85 * mouth_openness;
  std::vector<Blob> out{face, accent, left_eye, right_eye, mouth};
  out[2].opacity = out[3].opacity = eye_opacity;
  out[4].opacity = mouth_opacity;
  return out;
}

ExpressionFeature<double> encode_expression(const Expression& e, Index dim) {
  static constexpr double direction[] = {0.9, -0.7, 0.5, -0.3, 0.8, -0.6, 0.4, -0.2};
  const Index half = dim / 2;
  TensorD v({dim});
  for (Index k = 0; k < half; ++k) {
    const double d = direction[k % 8];
    v[k] = (2.0 * e.mouth_openness - 1.0) * d;
    v[half + k] = (2.0 * e.eye_openness - 1.0) * d;
  }
  return ExpressionFeature<double>(std::move(v));
}

TensorD render_face(const Eigen::Vector3d& background, const std::vector<Blob>& blobs, Index size,
                    const Transform& warp) {
  const auto grid = make_grid<double>(size, size);
  TensorD img({3, size, size});
  for (Index r = 0; r < size; ++r) {
    for (Index c = 0; c < size; ++c) {
      const Vec2<double> q = apply_transform(warp, Vec2<double>(grid.x(r, c), grid.y(r, c)));
      Eigen::Vector3d rgb = background;
      for (const Blob& b : blobs) {
        const double a = b.opacity * blob_density(b, q);
        rgb = (1.0 - a) * rgb + a * b.color;
      }
      for (Index ch = 0; ch < 3; ++ch) img(ch, r, c) = rgb[ch];
    }
  }
  return img;
}

Heatmap<double> gaussian_heatmap(const Vec2<double>& mean, const Mat2<double>& covariance,
                                 Index size) {
  const auto grid = make_grid<double>(size, size);
  const Mat2<double> precision = covariance.inverse();
  TensorD w({size, size});
  for (Index r = 0; r < size; ++r) {
    for (Index c = 0; c < size; ++c) {
      const Vec2<double> d(grid.x(r, c) - mean.x(), grid.y(r, c) - mean.y());
      w(r, c) = std::exp(-0.5 * d.dot(precision * d));
    }
  }
  return Heatmap<double>::normalized(std::move(w));
}

SyntheticScene render_scene(std::uint64_t seed, const SceneSpec& spec) {
  spec.validate();
  Rng rng(seed);
  const FaceModel face = random_face(rng);
  const Expression src_expr = random_expression(rng);
  Expression drv_expr = random_expression(rng);

  // Draw every motion parameter regardless of the SceneSpec flags so the face and
  // expression streams do not depend on the motion settings.
  const double angle = rng.uniform(-1.0, 1.0) * spec.max_rotation_deg * std::numbers::pi / 180.0;
  const double scale = rng.uniform(spec.min_scale, spec.max_scale);
  const Vec2<double> shift(rng.uniform(-1.0, 1.0) * spec.max_translation,
                           rng.uniform(-1.0, 1.0) * spec.max_translation);

  Affine2D<double> forward = Affine2D<double>::identity();
  if (spec.zero_motion) {
    drv_expr = src_expr;
  } else if (spec.fixed_translation) {
    forward = Affine2D<double>::from_translation(spec.fixed_translation->x(),
                                                 spec.fixed_translation->y());
  } else {
    forward = {scale * rotation(angle), shift};
  }

  PointMatrix<double> kp_src(9, 2);
  const Mat2<double> face_axes = face.face.covariance.llt().matrixL();
  kp_src.row(0) = face.face.center.transpose();
  kp_src.row(1) = face.left_eye.center.transpose();
  kp_src.row(2) = face.right_eye.center.transpose();
  kp_src.row(3) = face.mouth.center.transpose();
  kp_src.row(4) = face.accent.center.transpose();
  kp_src.row(5) = (face.face.center + face_axes * Vec2<double>(0.9, 0.0)).transpose();
  kp_src.row(6) = (face.face.center + face_axes * Vec2<double>(-0.9, 0.0)).transpose();
  kp_src.row(7) = (face.face.center + face_axes * Vec2<double>(0.0, 0.9)).transpose();
  kp_src.row(8) = (face.face.center + face_axes * Vec2<double>(0.0, -0.9)).transpose();

  PointMatrix<double> kp_drv(9, 2);
  for (Index i = 0; i < 9; ++i) {
    Vec2<double> q = forward(kp_src.row(i).transpose());
    const Vec2<double> jitter(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    if (spec.transform == TransformKind::tps && !spec.zero_motion) q += spec.keypoint_jitter * jitter;
    kp_drv.row(i) = q.transpose();
  }
  KeypointSet<double> src_keys(kp_src), drv_keys(kp_drv);

  Transform backward = forward.inverse();
  if (spec.transform == TransformKind::tps) {
    backward = spec.zero_motion ? TpsTransform<double>::identity(drv_keys)
                                : tps_fit(drv_keys, src_keys, 0.0);
  }

  const Mat2<double> head_cov = 0.25 * face.face.covariance;
  const Vec2<double> drv_mean = forward(face.face.center);
  const Mat2<double> drv_cov = forward.linear * head_cov * forward.linear.transpose();

  const Transform identity = Affine2D<double>::identity();
  const auto src_blobs = face.blobs(src_expr.eye_openness, src_expr.mouth_openness);
  const auto drv_blobs = face.blobs(drv_expr.eye_openness, drv_expr.mouth_openness);
  TensorD source = render_face(face.background, src_blobs, spec.size, identity);
  TensorD driving = render_face(face.background, drv_blobs, spec.size, backward);

  return SyntheticScene{seed,
                        spec,
                        face,
                        src_expr,
                        drv_expr,
                        std::move(source),
                        std::move(driving),
                        std::move(backward),
                        forward,
                        gaussian_heatmap(face.face.center, head_cov, spec.size),
                        gaussian_heatmap(drv_mean, drv_cov, spec.size),
                        std::move(src_keys),
                        std::move(drv_keys),
                        encode_expression(drv_expr, spec.expression_dim)};
}

TensorD render_driving(const SyntheticScene& scene, const Expression& expression) {
  return render_face(scene.face.background,
                     scene.face.blobs(expression.eye_openness, expression.mouth_openness),
                     scene.spec.size, scene.transform);
}

TensorD region_mask(const SyntheticScene& scene, Region region, double threshold) {
  std::vector<const Blob*> parts;
  switch (region) {
    case Region::face: parts = {&scene.face.face}; break;
    case Region::eyes: parts = {&scene.face.left_eye, &scene.face.right_eye}; break;
    case Region::mouth: parts = {&scene.face.mouth}; break;
  }
  const Index n = scene.spec.size;
  const auto grid = make_grid<double>(n, n);
  TensorD mask({n, n});
  for (Index r = 0; r < n; ++r) {
    for (Index c = 0; c < n; ++c) {
      const Vec2<double> q =
          apply_transform(scene.transform, Vec2<double>(grid.x(r, c), grid.y(r, c)));
      for (const Blob* b : parts) {
        if (blob_density(*b, q) >= threshold) mask(r, c) = 1.0;
      }
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Oracles. These deliberately avoid the geometry module's helpers.
// ---------------------------------------------------------------------------

Moments moment_oracle(const Heatmap<double>& h) {
  const Index rows = h.values().dim(0), cols = h.values().dim(1);
  auto coord = [](Index i, Index n) { return n == 1 ? 0.0 : 2.0 * double(i) / double(n - 1) - 1.0; };
  double m0 = 0, mx = 0, my = 0;
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      const double w = h.values()[r * cols + c];
      m0 += w;
      mx += w * coord(c, cols);
      my += w * coord(r, rows);
    }
  }
  mx /= m0;
  my /= m0;
  double sxx = 0, sxy = 0, syy = 0;
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      const double w = h.values()[r * cols + c];
      const double dx = coord(c, cols) - mx, dy = coord(r, rows) - my;
      sxx += w * dx * dx;
      sxy += w * dx * dy;
      syy += w * dy * dy;
    }
  }
  Moments m;
  m.mean = Vec2<double>(mx, my);
  m.covariance << sxx / m0, sxy / m0, sxy / m0, syy / m0;
  return m;
}

TpsOracleSolution tps_dense_oracle(const std::vector<std::array<double, 2>>& driving,
                                   const std::vector<std::array<double, 2>>& source, double reg) {
  const std::size_t n = driving.size();
  if (source.size() != n || n < 3) throw DomainError("tps oracle: bad point counts");
  const std::size_t m = n + 3;
  std::vector<std::vector<double>> a(m, std::vector<double>(m + 2, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = driving[i][0] - driving[j][0], dy = driving[i][1] - driving[j][1];
      const double r2 = dx * dx + dy * dy;
      a[i][j] = r2 > 0.0 ? r2 * std::log(r2) : 0.0;
    }
    a[i][i] += reg;
    a[i][n] = 1.0;
    a[i][n + 1] = driving[i][0];
    a[i][n + 2] = driving[i][1];
    a[n][i] = 1.0;
    a[n + 1][i] = driving[i][0];
    a[n + 2][i] = driving[i][1];
    a[i][m] = source[i][0];
    a[i][m + 1] = source[i][1];
  }
  for (std::size_t col = 0; col < m; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < m; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    }
    if (std::abs(a[pivot][col]) < 1e-300) throw NumericError("tps oracle: singular system");
    std::swap(a[col], a[pivot]);
    for (std::size_t r = col + 1; r < m; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t k = col; k < m + 2; ++k) a[r][k] -= f * a[col][k];
    }
  }
  std::vector<std::array<double, 2>> x(m);
  for (std::size_t i = m; i-- > 0;) {
    for (int rhs = 0; rhs < 2; ++rhs) {
      double v = a[i][m + rhs];
      for (std::size_t k = i + 1; k < m; ++k) v -= a[i][k] * x[k][rhs];
      x[i][rhs] = v / a[i][i];
    }
  }
  TpsOracleSolution out;
  out.weights.assign(x.begin(), x.begin() + long(n));
  for (int d = 0; d < 2; ++d) {
    out.affine[d] = {x[n + 1][d], x[n + 2][d], x[n][d]};
  }
  return out;
}

std::array<double, 2> tps_scalar_eval(const std::vector<std::array<double, 2>>& anchors,
                                      const TpsOracleSolution& coef, double x, double y) {
  std::array<double, 2> out{};
  for (int d = 0; d < 2; ++d) {
    out[d] = coef.affine[d][0] * x + coef.affine[d][1] * y + coef.affine[d][2];
  }
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const double dx = anchors[i][0] - x, dy = anchors[i][1] - y;
    const double r = std::sqrt(dx * dx + dy * dy);
    const double phi = r > 0.0 ? r * r * std::log(r * r) : 0.0;
    out[0] += coef.weights[i][0] * phi;
    out[1] += coef.weights[i][1] * phi;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

double psnr(const TensorD& a, const TensorD& b, double peak) {
  if (a.shape() != b.shape()) {
    throw DomainError("psnr: shape mismatch " + shape_string(a.shape()) + " vs " +
                      shape_string(b.shape()));
  }
  if (!(peak > 0.0)) throw DomainError("psnr: peak must be > 0");
  if (a.empty()) throw DomainError("psnr: empty tensors");
  const double mse = (a.vec() - b.vec()).squaredNorm() / double(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double ssim(const TensorD& a, const TensorD& b) {
  if (a.shape() != b.shape()) {
    throw DomainError("ssim: shape mismatch " + shape_string(a.shape()) + " vs " +
                      shape_string(b.shape()));
  }
  constexpr Index kWin = 7;
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const TensorD x = a.rank() == 2 ? a.reshaped({1, a.dim(0), a.dim(1)}) : a;
  const TensorD y = b.rank() == 2 ? b.reshaped({1, b.dim(0), b.dim(1)}) : b;
  require_rank(x, 3, "ssim");
  const Index channels = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h < kWin || w < kWin) throw DomainError("ssim: image smaller than the 7x7 window");
  const double n = double(kWin * kWin);
  double total = 0.0;
  Index count = 0;
  for (Index ch = 0; ch < channels; ++ch) {
    for (Index r = 0; r + kWin <= h; ++r) {
      for (Index c = 0; c + kWin <= w; ++c) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (Index i = 0; i < kWin; ++i) {
          for (Index j = 0; j < kWin; ++j) {
            const double va = x(ch, r + i, c + j), vb = y(ch, r + i, c + j);
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
          }
        }
        const double ma = sa / n, mb = sb / n;
        const double va = saa / n - ma * ma, vb = sbb / n - mb * mb, cov = sab / n - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
    }
  }
  return total / double(count);
}

TensorD crop_center(const TensorD& t, double fraction) {
  require_rank(t, 3, "crop_center");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw DomainError("crop_center: fraction in (0, 1]");
  const Index h = t.dim(1), w = t.dim(2);
  const Index ch_ = std::max<Index>(1, Index(std::lround(double(h) * fraction)));
  const Index cw = std::max<Index>(1, Index(std::lround(double(w) * fraction)));
  const Index r0 = (h - ch_) / 2, c0 = (w - cw) / 2;
  TensorD out({t.dim(0), ch_, cw});
  for (Index c = 0; c < t.dim(0); ++c) out.plane(c) = t.plane(c).block(r0, c0, ch_, cw);
  return out;
}

double interior_psnr(const TensorD& a, const TensorD& b, double fraction, double peak) {
  return psnr(crop_center(a, fraction), crop_center(b, fraction), peak);
}

}  // namespace disco
