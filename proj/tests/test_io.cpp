#include <doctest.h>

#include "disco/errors.hpp"
#include "disco/io.hpp"
#include "support.hpp"

using namespace disco;
using disco::test::random_tensor;

namespace {

TensorD quantized(Shape shape, Rng& rng) {
  TensorD t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = double(rng.index(256)) / 255.0;
  return t;
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("quantization rounds half to even and clamps") {
    CHECK(quantize_unit(0.0) == 0);
    CHECK(quantize_unit(1.0) == 255);
    CHECK(quantize_unit(-3.0) == 0);
    CHECK(quantize_unit(7.0) == 255);
    CHECK(quantize_unit(0.5 / 255.0) == 0);
    CHECK(quantize_unit(1.5 / 255.0) == 2);
    CHECK(quantize_unit(2.5 / 255.0) == 2);
    CHECK_THROWS_AS(quantize_unit(std::nan("")), DomainError);
  }

  TEST_CASE("PNM round trips exactly for 8-bit values") {
    Rng rng(1);
    const TensorD rgb = quantized({3, 5, 7}, rng);
    const std::string p6 = encode_pnm(rgb);
    CHECK(p6.substr(0, 2) == "P6");
    CHECK(decode_pnm(p6) == rgb);

    const TensorD gray = quantized({1, 4, 6}, rng);
    CHECK(decode_pnm(encode_pnm(gray)) == gray);
    CHECK(encode_pnm(gray.reshaped({4, 6})) == encode_pnm(gray));
  }

  TEST_CASE("PNM parsing handles comments and rejects malformed files") {
    const std::string ok = std::string("P5\n# note\n2 1\n255\n") + char(0) + char(255);
    const TensorD t = decode_pnm(ok);
    CHECK(t.shape() == Shape{1, 1, 2});
    CHECK(t[1] == 1.0);

    try {
      decode_pnm("P3\n1 1\n255\n0 0 0");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.offset() == 0);
      CHECK(std::string(e.what()).find("bad magic") != std::string::npos);
    }
    CHECK_THROWS_AS(decode_pnm("P5\n2 1\n65535\n\x01\x02\x03\x04"), ParseError);
    CHECK_THROWS_AS(decode_pnm(std::string("P5\n2 1\n255\n") + char(1)), ParseError);
    CHECK_THROWS_AS(decode_pnm(std::string("P5\n1 1\n255\n") + char(1) + char(2)), ParseError);
    CHECK_THROWS_AS(encode_pnm(TensorD({2, 3, 3})), DomainError);
  }

  TEST_CASE("flow container") {
    Rng rng(2);
    const FlowFieldD f(random_tensor({2, 3, 4}, rng));
    const std::string bytes = encode_flow(f);
    CHECK(bytes.substr(0, 4) == "DFLW");
    CHECK(bytes.size() == 4 + 8 + 3 * 4 * 16);
    CHECK(decode_flow(bytes) == f);
    CHECK_THROWS_AS(decode_flow(bytes.substr(0, bytes.size() - 1)), ParseError);
    CHECK_THROWS_AS(decode_flow("XXXX" + bytes.substr(4)), ParseError);
  }

  TEST_CASE("checkpoint container") {
    Rng rng(3);
    ParameterSet p;
    p.add("a.w", random_tensor({2, 3, 1, 1}, rng));
    p.add("a.b", random_tensor({2}, rng));
    const std::string bytes = encode_checkpoint(p);
    CHECK(decode_checkpoint(bytes) == p);
    CHECK(encode_checkpoint(decode_checkpoint(bytes)) == bytes);
    CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), ParseError);
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, 10)), ParseError);
  }

  TEST_CASE("transform JSON round trips bitwise") {
    Affine2D<double> a;
    a.linear << 0.1, 1.0 / 3.0, -2.5e-17, 0.9;
    a.translation = Vec2<double>(1e-300, -0.7);
    const Transform back = transform_from_json(transform_to_json(Transform(a)));
    const auto& b = std::get<Affine2D<double>>(back);
    CHECK(b.linear == a.linear);
    CHECK(b.translation == a.translation);

    PointMatrix<double> drv(4, 2), src(4, 2);
    drv << 0, 0, 0.5, 0.1, -0.4, 0.3, 0.2, -0.6;
    src = drv;
    src(1, 0) += 0.05;
    const auto tps = tps_fit(KeypointSet<double>(drv), KeypointSet<double>(src), 0.0);
    const auto& t2 = std::get<TpsTransform<double>>(transform_from_json(transform_to_json(Transform(tps))));
    CHECK(t2.affine == tps.affine);
    CHECK(t2.weights == tps.weights);
    CHECK(t2.anchors.points() == tps.anchors.points());

    CHECK_THROWS_AS(transform_from_json("{\"type\":\"affine\",\"linear\":[[1,0],[0,1]]"), ParseError);
    CHECK_THROWS_AS(transform_from_json("{\"type\":\"warp\"}"), DomainError);
  }

  TEST_CASE("keypoint JSON") {
    PointMatrix<double> p(3, 2);
    p << 0.1, 0.2, -0.3, 0.4, 0.5, -0.6;
    CHECK(keypoints_from_json(keypoints_to_json(p)) == p);
    CHECK(keypoints_from_json("[[0.1,0.2],[-0.3,0.4],[0.5,-0.6]]") == p);
    CHECK_THROWS(keypoints_from_json("{\"points\":[[0.1]]}"));
  }

  TEST_CASE("config JSON") {
    PipelineConfig c;
    c.variant = Variant::neural_mix;
    c.transform = TransformKind::tps;
    c.steps = 17;
    c.learning_rate = 3e-4;
    const PipelineConfig back = config_from_json(config_to_json(c));
    CHECK(config_to_json(back) == config_to_json(c));
    CHECK(back.variant == Variant::neural_mix);
    CHECK(back.steps == 17);
    CHECK_THROWS_AS(config_from_json("{\"stepz\": 3}"), DomainError);
    CHECK_THROWS_AS(config_from_json("{\"steps\": \"many\"}"), DomainError);
    CHECK_THROWS_AS(config_from_json("{\"image_size\": 30}"), DomainError);
    CHECK(config_from_json("{}").batch_size == PipelineConfig{}.batch_size);
  }

  TEST_CASE("loss CSV") {
    CHECK(loss_csv({0.5, 0.25}) == "step,loss\n1,0.5\n2,0.25\n");
  }
}
