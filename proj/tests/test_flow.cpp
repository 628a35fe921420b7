#include <doctest.h>

#include "disco/errors.hpp"
#include "disco/flow.hpp"
#include "disco/synthbench.hpp"
#include "support.hpp"

using namespace disco;
using disco::test::random_tensor;

namespace {

TpsTransform<double> random_tps(Rng& rng) {
  PointMatrix<double> drv(6, 2);
  drv << -0.5, -0.5, 0.5, -0.5, 0.5, 0.5, -0.5, 0.5, 0.0, 0.0, 0.2, -0.3;
  PointMatrix<double> src = drv;
  for (Index i = 0; i < src.size(); ++i) src.data()[i] += rng.uniform(-0.1, 0.1);
  return tps_fit(KeypointSet<double>(drv), KeypointSet<double>(src), 0.0);
}

}  // namespace

TEST_SUITE("flow") {
  TEST_CASE("identity flow") {
    Rng rng(1);
    const TensorD f = random_tensor({4, 6, 5}, rng);
    CHECK(warp_features(f, identity_flow(6, 5)) == f);
    const auto f3 = identity_flow(3, 3);
    CHECK(f3.x(1, 1) == 0.0);
    CHECK(f3.y(1, 1) == 0.0);
    const auto f2 = identity_flow(2, 2);
    CHECK(f2.x(0, 0) == -1.0);
    CHECK(f2.x(1, 1) == 1.0);
    CHECK(f2.y(0, 1) == -1.0);
    CHECK(f2.y(1, 0) == 1.0);
  }

  TEST_CASE("affine flows") {
    CHECK(coarse_flow_affine(Affine2D<double>::identity(), 5, 7) == identity_flow(5, 7));

    const auto shifted = coarse_flow_affine(Affine2D<double>::from_translation(0.5, 0.0), 4, 6);
    const auto id = identity_flow(4, 6);
    for (Index r = 0; r < 4; ++r) {
      for (Index c = 0; c < 6; ++c) {
        CHECK(shifted.x(r, c) == id.x(r, c) + 0.5);
        CHECK(shifted.y(r, c) == id.y(r, c));
      }
    }

    Affine2D<double> quarter;
    quarter.linear << 0.0, -1.0, 1.0, 0.0;
    const auto rot = coarse_flow_affine(quarter, 3, 3);
    // Pixel (row 1, col 2) sits at (1, 0) and samples from (0, 1).
    CHECK(rot.x(1, 2) == 0.0);
    CHECK(rot.y(1, 2) == 1.0);
  }

  TEST_CASE("TPS flows") {
    PointMatrix<double> anchors(3, 2);
    anchors << 0, 0, 0.5, 0.1, -0.4, 0.3;
    const auto ident = TpsTransform<double>::identity(KeypointSet<double>(anchors));
    CHECK(coarse_flow_tps(ident, 5, 5) == identity_flow(5, 5));

    Rng rng(2);
    const auto t = random_tps(rng);
    const auto flow = coarse_flow_tps(t, 9, 9);
    for (Index r = 0; r < 9; ++r) {
      for (Index c = 0; c < 9; ++c) {
        const Vec2<double> q =
            tps_eval(t, Vec2<double>(normalized_coord(c, 9), normalized_coord(r, 9)));
        CHECK(std::abs(flow.x(r, c) - q.x()) < 1e-12);
        CHECK(std::abs(flow.y(r, c) - q.y()) < 1e-12);
      }
    }
    // (-0.5,-0.5) is lattice pixel (2,2) on a 9x9 grid.
    const Vec2<double> at_anchor = tps_eval(t, t.anchors.point(0));
    CHECK(std::abs(flow.x(2, 2) - at_anchor.x()) < 1e-12);
    CHECK(std::abs(flow.y(2, 2) - at_anchor.y()) < 1e-12);
  }

  TEST_CASE("composition endpoints and midpoint") {
    Rng rng(3);
    const auto oi = identity_flow(5, 6);
    const FlowFieldD ot(random_tensor({2, 5, 6}, rng));
    CHECK(compose_flow(MotionMask<double>::constant(5, 6, 0.0), oi, ot) == oi);
    CHECK(compose_flow(MotionMask<double>::constant(5, 6, 1.0), oi, ot) == ot);
    const auto mid = compose_flow(MotionMask<double>::constant(5, 6, 0.5), oi, ot);
    for (Index i = 0; i < mid.coords.size(); ++i) {
      CHECK(mid.coords[i] == doctest::Approx(0.5 * (oi.coords[i] + ot.coords[i])).epsilon(1e-15));
    }
  }

  TEST_CASE("composition stays between its endpoints") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
      const FlowFieldD oi(random_tensor({2, 4, 4}, rng, -3.0, 3.0));
      const FlowFieldD ot(random_tensor({2, 4, 4}, rng, -3.0, 3.0));
      const MotionMask<double> m(random_tensor({4, 4}, rng, 0.0, 1.0));
      const auto out = compose_flow(m, oi, ot);
      for (Index i = 0; i < out.coords.size(); ++i) {
        CHECK(out.coords[i] >= std::min(oi.coords[i], ot.coords[i]));
        CHECK(out.coords[i] <= std::max(oi.coords[i], ot.coords[i]));
      }
    }
  }

  TEST_CASE("mask and flow validation") {
    CHECK_THROWS_AS(MotionMask<double>::constant(3, 3, 1.5), DomainError);
    CHECK_THROWS_AS(ConfidenceMap<double>::constant(3, 3, -0.1), DomainError);
    CHECK_THROWS_AS(compose_flow(MotionMask<double>::constant(3, 3, 0.5), identity_flow(3, 4),
                                 identity_flow(3, 4)),
                    DomainError);
    CHECK_THROWS_AS(warp_features(TensorD({2, 3}), identity_flow(3, 3)), DomainError);
  }

  TEST_CASE("confidence gating") {
    Rng rng(5);
    const TensorD f = random_tensor({3, 4, 5}, rng);
    CHECK(apply_confidence(ConfidenceMap<double>::constant(4, 5, 1.0), f) == f);
    const TensorD zero = apply_confidence(ConfidenceMap<double>::constant(4, 5, 0.0), f);
    CHECK(zero.vec().cwiseAbs().maxCoeff() == 0.0);

    const ConfidenceMap<double> c(random_tensor({1, 4, 5}, rng, 0.0, 1.0));
    const TensorD g = apply_confidence(c, f);
    for (Index i = 0; i < 3; ++i) {
      for (Index y = 0; y < 4; ++y) {
        for (Index x = 0; x < 5; ++x) CHECK(g(i, y, x) == c.values()(0, y, x) * f(i, y, x));
      }
    }
  }

  TEST_CASE("warping a scene by its ground-truth motion reproduces the driving pose") {
    SceneSpec spec;
    spec.fixed_translation = Vec2<double>(0.2, 0.0);
    const SyntheticScene s = render_scene(7, spec);
    const TensorD warped = warp_features(s.source, coarse_flow(s.transform, 64, 64));
    CHECK(interior_psnr(warped, render_driving(s, s.source_expression)) > 30.0);
  }
}
