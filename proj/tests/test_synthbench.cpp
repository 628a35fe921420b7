#include <doctest.h>

#include <cmath>

#include "disco/errors.hpp"
#include "disco/geometry.hpp"
#include "disco/synthbench.hpp"
#include "support.hpp"

using namespace disco;
using disco::test::random_tensor;

TEST_SUITE("synthbench") {
  TEST_CASE("random streams are reproducible") {
    Rng a(99), b(99);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(5);
    for (int i = 0; i < 1000; ++i) {
      const double u = c.uniform();
      CHECK(u >= 0.0);
      CHECK(u < 1.0);
      CHECK(c.index(7) < 7);
    }
  }

  TEST_CASE("scenes are bitwise reproducible") {
    for (TransformKind kind : {TransformKind::affine, TransformKind::tps}) {
      SceneSpec spec;
      spec.transform = kind;
      const SyntheticScene a = render_scene(17, spec), b = render_scene(17, spec);
      CHECK(a.source == b.source);
      CHECK(a.driving == b.driving);
      CHECK(a.expression.vector == b.expression.vector);
      CHECK(kind_of(a.transform) == kind);
      const SyntheticScene other = render_scene(18, spec);
      CHECK_FALSE(other.source == a.source);
    }
  }

  TEST_CASE("zero motion renders identical frames") {
    for (TransformKind kind : {TransformKind::affine, TransformKind::tps}) {
      SceneSpec spec;
      spec.transform = kind;
      spec.zero_motion = true;
      const SyntheticScene s = render_scene(4, spec);
      CHECK(s.source == s.driving);
    }
  }

  TEST_CASE("translation-only motion shifts every blob by the translation") {
    SceneSpec spec;
    spec.fixed_translation = Vec2<double>(0.2, 0.0);
    const SyntheticScene s = render_scene(21, spec);
    PointMatrix<double> expect = s.source_keypoints.points();
    expect.col(0).array() += 0.2;
    CHECK(s.driving_keypoints.points() == expect);

    std::vector<Blob> shifted = s.face.blobs(s.driving_expression.eye_openness,
                                             s.driving_expression.mouth_openness);
    for (Blob& b : shifted) b.center.x() += 0.2;
    const TensorD analytic =
        render_face(s.face.background, shifted, spec.size, Affine2D<double>::identity());
    CHECK((analytic.vec() - s.driving.vec()).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("region masks cover their parts") {
    const SyntheticScene s = render_scene(3, SceneSpec{});
    const TensorD mouth = region_mask(s, Region::mouth);
    const TensorD eyes = region_mask(s, Region::eyes);
    const TensorD face = region_mask(s, Region::face);
    CHECK(mouth.vec().sum() > 0.0);
    CHECK(eyes.vec().sum() > 0.0);
    CHECK(face.vec().sum() > mouth.vec().sum());
  }

  TEST_CASE("expression encoding") {
    const auto neutral = encode_expression(Expression{0.5, 0.5}, 16);
    CHECK(neutral.vector.vec().cwiseAbs().maxCoeff() == 0.0);
    const auto a = encode_expression(Expression{0.9, 0.1}, 16);
    const auto b = encode_expression(Expression{0.9, 0.9}, 16);
    // Only the mouth half responds to mouth openness.
    CHECK(a.vector.vec().tail(8) == b.vector.vec().tail(8));
    CHECK_FALSE(a.vector.vec().head(8) == b.vector.vec().head(8));
  }

  TEST_CASE("moment oracle") {
    TensorD d({5, 5});
    d(1, 3) = 1.0;
    const Moments m = moment_oracle(Heatmap<double>(d));
    CHECK(m.mean.x() == 0.5);
    CHECK(m.mean.y() == -0.5);
    CHECK(m.covariance.cwiseAbs().maxCoeff() == 0.0);

    TensorD two({5, 5});
    two(2, 1) = 0.5;
    two(2, 3) = 0.5;
    const Moments t = moment_oracle(Heatmap<double>(two));
    CHECK(t.mean.norm() == 0.0);
    CHECK(t.covariance(0, 0) == 0.25);
    CHECK(t.covariance(0, 1) == 0.0);
    CHECK(t.covariance(1, 1) == 0.0);

    Rng rng(6);
    const Heatmap<double> h = Heatmap<double>::normalized(random_tensor({9, 11}, rng, 0.0, 1.0));
    CHECK((heatmap_translation(h) - moment_oracle(h).mean).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("PSNR") {
    Rng rng(7);
    const TensorD a = random_tensor({3, 8, 8}, rng, 0.0, 1.0);
    CHECK(psnr(a, a) == kPsnrCap);
    TensorD b = a;
    b.vec().array() += 0.1;
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));

    const TensorD c = random_tensor({3, 8, 8}, rng, 0.0, 1.0);
    double mse = 0.0;
    for (Index i = 0; i < a.size(); ++i) mse += (a[i] - c[i]) * (a[i] - c[i]);
    mse /= double(a.size());
    CHECK(std::abs(psnr(a, c) - 10.0 * std::log10(1.0 / mse)) < 1e-10);
    CHECK_THROWS_AS(psnr(a, TensorD({3, 8, 7})), DomainError);
  }

  TEST_CASE("SSIM") {
    Rng rng(8);
    const TensorD a = random_tensor({1, 12, 12}, rng, 0.0, 1.0);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    TensorD inv = a;
    inv.vec() = (1.0 - a.vec().array()).matrix();
    CHECK(ssim(a, inv) < 1.0);

    // Constant windows: the structure term is C2/C2 and only luminance remains.
    const double x = 0.3, y = 0.55;
    const double c1 = 0.01 * 0.01;
    const double expect = (2 * x * y + c1) / (x * x + y * y + c1);
    CHECK(ssim(TensorD({1, 10, 10}, x), TensorD({1, 10, 10}, y)) ==
          doctest::Approx(expect).epsilon(1e-12));
  }

  TEST_CASE("spec validation") {
    SceneSpec s;
    s.size = 4;
    CHECK_THROWS_AS(s.validate(), DomainError);
    s = SceneSpec{};
    s.min_scale = 1.2;
    s.max_scale = 1.1;
    CHECK_THROWS_AS(s.validate(), DomainError);
  }
}
