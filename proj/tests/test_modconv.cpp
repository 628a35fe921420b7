#include <doctest.h>

#include "disco/errors.hpp"
#include "disco/modconv.hpp"
#include "support.hpp"

using namespace disco;
using disco::test::central_differences;
using disco::test::random_tensor;
using disco::test::rel_err;

namespace {

// Zero-padded cross-correlation by direct summation.
TensorD naive_conv(const TensorD& x, const ConvKernel<double>& k, Index stride) {
  const Index oc = k.weights.dim(0), ic = k.weights.dim(1), kh = k.weights.dim(2),
              kw = k.weights.dim(3);
  const Index h = x.dim(1), w = x.dim(2);
  const Index oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
  TensorD y({oc, oh, ow});
  for (Index o = 0; o < oc; ++o) {
    for (Index r = 0; r < oh; ++r) {
      for (Index c = 0; c < ow; ++c) {
        double acc = k.bias.empty() ? 0.0 : k.bias[o];
        for (Index i = 0; i < ic; ++i) {
          for (Index a = 0; a < kh; ++a) {
            for (Index b = 0; b < kw; ++b) {
              const Index yy = r * stride + a - kh / 2, xx = c * stride + b - kw / 2;
              if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
              acc += k.weights[((o * ic + i) * kh + a) * kw + b] * x(i, yy, xx);
            }
          }
        }
        y(o, r, c) = acc;
      }
    }
  }
  return y;
}

ConvKernel<double> random_kernel(Index oc, Index ic, Index k, Rng& rng) {
  return ConvKernel<double>(random_tensor({oc, ic, k, k}, rng), random_tensor({oc}, rng));
}

double slice_norm(const TensorD& w, Index o) {
  const Index per = w.size() / w.dim(0);
  return w.vec().segment(o * per, per).norm();
}

}  // namespace

TEST_SUITE("modconv") {
  TEST_CASE("convolution agrees with direct summation on every code path") {
    Rng rng(1);
    struct Case {
      Index oc, ic, k, stride, h, w;
    };
    // 1x1, shift-and-accumulate (few outputs, wide kernel), chunked GEMM, strided.
    for (const Case c : {Case{5, 3, 1, 1, 6, 7}, Case{3, 6, 7, 1, 9, 8}, Case{8, 4, 3, 1, 7, 9},
                         Case{6, 3, 3, 2, 9, 8}, Case{2, 2, 5, 2, 8, 8}}) {
      const TensorD x = random_tensor({c.ic, c.h, c.w}, rng);
      const auto k = random_kernel(c.oc, c.ic, c.k, rng);
      const TensorD fast = conv2d(x, k, c.stride);
      const TensorD slow = naive_conv(x, k, c.stride);
      REQUIRE(fast.shape() == slow.shape());
      CHECK((fast.vec() - slow.vec()).cwiseAbs().maxCoeff() < 1e-12);

      TensorD xv = x;
      ConvKernel<double> kv = k;
      const TensorD up = random_tensor(fast.shape(), rng);
      const auto g = conv2d_vjp(x, k, up, c.stride);
      auto objective = [&] { return test::dot(naive_conv(xv, kv, c.stride), up); };
      CHECK(rel_err(g.input.vec(), central_differences(xv, objective)) < 1e-8);
      CHECK(rel_err(g.weights.vec(), central_differences(kv.weights, objective)) < 1e-8);
      CHECK(rel_err(g.bias.vec(), central_differences(kv.bias, objective)) < 1e-8);
    }
  }

  TEST_CASE("unit scales normalize each output slice") {
    Rng rng(2);
    const auto k = random_kernel(4, 3, 3, rng);
    const auto m = modulate_weights(k, ScaleVector<double>::ones(3), 0.0);
    for (Index o = 0; o < 4; ++o) CHECK(slice_norm(m.weights, o) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(m.bias == k.bias);
  }

  TEST_CASE("modulation is invariant to a global rescaling of s when eps = 0") {
    Rng rng(3);
    const auto k = random_kernel(3, 4, 3, rng);
    const TensorD s = random_tensor({4}, rng, 0.5, 1.5);
    TensorD cs = s;
    cs.vec() *= 7.25;
    const auto a = modulate_weights(k, ScaleVector<double>(s), 0.0);
    const auto b = modulate_weights(k, ScaleVector<double>(cs), 0.0);
    CHECK((a.weights.vec() - b.weights.vec()).cwiseAbs().maxCoeff() < 1e-14);
  }

  TEST_CASE("scalar kernel: 3 * 2 / sqrt(36) = 1") {
    const ConvKernel<double> k(TensorD({1, 1, 1, 1}, 3.0));
    const auto m = modulate_weights(k, ScaleVector<double>(TensorD({1}, 2.0)), 0.0);
    CHECK(m.weights[0] == 1.0);
  }

  TEST_CASE("1x1 modulated convolution is per-pixel channel mixing") {
    Rng rng(4);
    const TensorD x = random_tensor({3, 4, 5}, rng);
    const auto k = random_kernel(2, 3, 1, rng);
    const TensorD s = random_tensor({3}, rng, 0.5, 1.5);
    const TensorD y = modconv_forward(x, k, ScaleVector<double>(s), 1e-8);
    Eigen::Matrix<double, 2, 3> mix;
    for (Index o = 0; o < 2; ++o) {
      double n = 1e-8;
      for (Index i = 0; i < 3; ++i) n += std::pow(s[i] * k.weights[o * 3 + i], 2);
      for (Index i = 0; i < 3; ++i) mix(o, i) = s[i] * k.weights[o * 3 + i] / std::sqrt(n);
    }
    for (Index r = 0; r < 4; ++r) {
      for (Index c = 0; c < 5; ++c) {
        const Eigen::Vector3d v(x(0, r, c), x(1, r, c), x(2, r, c));
        const Eigen::Vector2d expect = mix * v + Eigen::Vector2d(k.bias[0], k.bias[1]);
        CHECK(std::abs(y(0, r, c) - expect[0]) < 1e-14);
        CHECK(std::abs(y(1, r, c) - expect[1]) < 1e-14);
      }
    }
  }

  TEST_CASE("zero input yields the broadcast bias") {
    Rng rng(5);
    const auto k = random_kernel(3, 2, 3, rng);
    const TensorD y = modconv_forward(TensorD({2, 4, 4}), k, ScaleVector<double>::ones(2));
    for (Index o = 0; o < 3; ++o) {
      for (Index p = 0; p < 16; ++p) CHECK(y[o * 16 + p] == k.bias[o]);
    }
  }

  TEST_CASE("unit scales reduce to convolution with pre-normalized weights") {
    Rng rng(6);
    const TensorD x = random_tensor({4, 6, 6}, rng);
    const auto k = random_kernel(5, 4, 3, rng);
    TensorD w = k.weights;
    const Index per = w.size() / 5;
    for (Index o = 0; o < 5; ++o) {
      const double n = std::sqrt(w.vec().segment(o * per, per).squaredNorm() + kDefaultDemodEps);
      w.vec().segment(o * per, per) /= n;
    }
    const TensorD plain = naive_conv(x, ConvKernel<double>(w, k.bias), 1);
    const TensorD mod = modconv_forward(x, k, ScaleVector<double>::ones(4));
    CHECK((plain.vec() - mod.vec()).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("modulated convolution VJP") {
    Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
      TensorD x = random_tensor({3, 4, 4}, rng);
      ConvKernel<double> k = random_kernel(2, 3, 3, rng);
      TensorD s = random_tensor({3}, rng, 0.5, 1.5);
      const TensorD up = random_tensor({2, 4, 4}, rng);
      const auto g = modconv_vjp(x, k, ScaleVector<double>(s), kDefaultDemodEps, up);
      auto objective = [&] {
        return test::dot(modconv_forward(x, k, ScaleVector<double>(s), kDefaultDemodEps), up);
      };
      CHECK(rel_err(g.input.vec(), central_differences(x, objective)) < 1e-5);
      CHECK(rel_err(g.weights.vec(), central_differences(k.weights, objective)) < 1e-5);
      CHECK(rel_err(g.scales.vec(), central_differences(s, objective)) < 1e-5);
      CHECK(rel_err(g.bias.vec(), central_differences(k.bias, objective)) < 1e-5);
    }
  }

  TEST_CASE("zero upstream gives zero gradients") {
    Rng rng(8);
    const TensorD x = random_tensor({3, 4, 4}, rng);
    const auto k = random_kernel(2, 3, 3, rng);
    const auto g = modconv_vjp(x, k, ScaleVector<double>::ones(3), 1e-8, TensorD({2, 4, 4}));
    CHECK(g.input.vec().cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.weights.vec().cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.scales.vec().cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.bias.vec().cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("scale gradient is orthogonal to the scales when eps = 0") {
    Rng rng(9);
    const TensorD x = random_tensor({4, 5, 5}, rng);
    const auto k = random_kernel(3, 4, 3, rng);
    const TensorD s = random_tensor({4}, rng, 0.5, 1.5);
    const auto g = modconv_vjp(x, k, ScaleVector<double>(s), 0.0, random_tensor({3, 5, 5}, rng));
    REQUIRE(g.scales.size() == 4);
    CHECK(std::abs(test::dot(g.scales, s)) < 1e-10);
  }

  TEST_CASE("expression scales") {
    const ExpressionFeature<double> zero(TensorD({6}));
    const ScaleHead<double> head{TensorD({4, 6}), TensorD({4})};
    const auto s = expression_scales(zero, head);
    REQUIRE(s.size() == 4);
    for (Index i = 0; i < 4; ++i) CHECK(s.scales[i] == 1.0);

    Rng rng(10);
    const ExpressionFeature<double> f(random_tensor({6}, rng));
    const ScaleHead<double> h{random_tensor({4, 6}, rng), random_tensor({4}, rng)};
    CHECK(expression_scales(f, h).scales == expression_scales(f, h).scales);
    for (Index i = 0; i < 4; ++i) {
      CHECK(expression_scales(f, h).scales[i] > 0.5);
      CHECK(expression_scales(f, h).scales[i] < 1.5);
    }
    CHECK_THROWS_AS(expression_scales(ExpressionFeature<double>(TensorD({5})), h), DomainError);
  }

  TEST_CASE("expression scale VJP") {
    Rng rng(11);
    const ExpressionFeature<double> f(random_tensor({6}, rng));
    ScaleHead<double> h{random_tensor({4, 6}, rng), random_tensor({4}, rng)};
    const TensorD up = random_tensor({4}, rng);
    const auto g = expression_scales_vjp(f, h, up);
    auto objective = [&] { return test::dot(expression_scales(f, h).scales, up); };
    CHECK(rel_err(g.weights.vec(), central_differences(h.weights, objective)) < 1e-5);
    CHECK(rel_err(g.bias.vec(), central_differences(h.bias, objective)) < 1e-5);
  }

  TEST_CASE("input validation") {
    Rng rng(12);
    CHECK_THROWS_AS(ConvKernel<double>(TensorD({2, 2, 2, 2})), DomainError);
    CHECK_THROWS_AS(ScaleVector<double>(TensorD({3}, 0.0)), DomainError);
    const auto k = random_kernel(2, 3, 3, rng);
    CHECK_THROWS_AS(modulate_weights(k, ScaleVector<double>::ones(4)), DomainError);
    CHECK_THROWS_AS(modulate_weights(k, ScaleVector<double>::ones(3), -1.0), DomainError);
    CHECK_THROWS_AS(conv2d(TensorD({2, 4, 4}), k), DomainError);
  }
}
