#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <regex>

#include <json.hpp>

#include "disco/flow.hpp"
#include "disco/io.hpp"
#include "disco/synthbench.hpp"
#include "support.hpp"

using namespace disco;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;  // stdout and stderr together
};

Run run(const std::string& args) {
  const std::string cmd = std::string(DISCO_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) out.append(buf.data(), n);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

/// Fresh scratch directory per test case.
class Scratch {
 public:
  explicit Scratch(const std::string& name)
      : dir_(fs::temp_directory_path() / ("disco_cli_" + name + "_" + std::to_string(::getpid()))) {
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  ~Scratch() { fs::remove_all(dir_); }
  std::string operator()(const std::string& file) const { return (dir_ / file).string(); }

 private:
  fs::path dir_;
};

double result_value(const std::string& out, const std::string& key) {
  const std::regex re("RESULT " + key + "=([-+0-9.eE]+)");
  std::smatch m;
  REQUIRE(std::regex_search(out, m, re));
  return std::stod(m[1]);
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("fit-tps on an identity correspondence") {
    Scratch tmp("fit_identity");
    PointMatrix<double> p(5, 2);
    p << 0, 0, 0.5, 0.1, -0.4, 0.3, 0.2, -0.6, 0.7, 0.7;
    write_file(tmp("p.json"), keypoints_to_json(p));
    const Run r = run("fit-tps --src " + tmp("p.json") + " --dst " + tmp("p.json") + " --out " +
                      tmp("t.json"));
    CHECK(r.code == 0);
    CHECK(result_value(r.out, "max_interpolation_residual") < 1e-12);
    CHECK(result_value(r.out, "max_abs_weight") < 1e-9);
    CHECK(fs::exists(tmp("t.json")));
  }

  TEST_CASE("fit-tps interpolates random pairs") {
    Scratch tmp("fit_random");
    Rng rng(5);
    PointMatrix<double> a(5, 2), b(5, 2);
    a << -0.6, -0.5, 0.5, -0.4, 0.6, 0.5, -0.5, 0.6, 0.05, 0.0;
    for (Index i = 0; i < 10; ++i) b.data()[i] = a.data()[i] + rng.uniform(-0.1, 0.1);
    write_file(tmp("a.json"), keypoints_to_json(a));
    write_file(tmp("b.json"), keypoints_to_json(b));
    const Run r = run("fit-tps --src " + tmp("a.json") + " --dst " + tmp("b.json") + " --out " +
                      tmp("t.json"));
    CHECK(r.code == 0);
    CHECK(result_value(r.out, "max_interpolation_residual") < 1e-8);
  }

  TEST_CASE("fit-tps rejects mismatched counts and coincident points") {
    Scratch tmp("fit_bad");
    PointMatrix<double> a(4, 2), b(3, 2), dup(4, 2);
    a << 0, 0, 0.5, 0.1, -0.4, 0.3, 0.2, -0.6;
    b << 0, 0, 0.5, 0.1, -0.4, 0.3;
    dup << 0, 0, 0.5, 0.1, 0, 0, 0.2, -0.6;
    write_file(tmp("a.json"), keypoints_to_json(a));
    write_file(tmp("b.json"), keypoints_to_json(b));
    write_file(tmp("dup.json"), keypoints_to_json(dup));
    Run r = run("fit-tps --src " + tmp("a.json") + " --dst " + tmp("b.json") + " --out " + tmp("t.json"));
    CHECK(r.code == 2);
    CHECK(r.out.find("count mismatch") != std::string::npos);
    r = run("fit-tps --src " + tmp("a.json") + " --dst " + tmp("dup.json") + " --out " + tmp("t.json"));
    CHECK(r.code == 2);
    CHECK(r.out.find("coincide") != std::string::npos);
    CHECK_FALSE(fs::exists(tmp("t.json")));
  }

  TEST_CASE("warp by the identity is bit-exact") {
    Scratch tmp("warp_identity");
    Rng rng(6);
    TensorD img({3, 9, 11});
    for (Index i = 0; i < img.size(); ++i) img[i] = double(rng.index(256)) / 255.0;
    write_pnm(tmp("in.ppm"), img);
    write_file(tmp("id.json"), transform_to_json(Transform(Affine2D<double>::identity())));
    const Run r = run("warp --image " + tmp("in.ppm") + " --transform " + tmp("id.json") +
                      " --out " + tmp("out.ppm"));
    CHECK(r.code == 0);
    CHECK(read_file(tmp("out.ppm")) == read_file(tmp("in.ppm")));
  }

  TEST_CASE("warp by a known translation matches the analytic render") {
    Scratch tmp("warp_shift");
    SceneSpec spec;
    spec.fixed_translation = Vec2<double>(0.2, 0.0);
    const SyntheticScene s = render_scene(31, spec);
    write_pnm(tmp("src.ppm"), s.source);
    write_file(tmp("t.json"), transform_to_json(s.transform));
    const Run r = run("warp --image " + tmp("src.ppm") + " --transform " + tmp("t.json") +
                      " --out " + tmp("out.ppm"));
    CHECK(r.code == 0);
    const TensorD expect = render_driving(s, s.source_expression);
    CHECK(interior_psnr(read_pnm(tmp("out.ppm")), expect) > 30.0);
  }

  TEST_CASE("warp with an all-zero mask keeps the image") {
    Scratch tmp("warp_mask");
    Rng rng(7);
    TensorD img({3, 6, 6});
    for (Index i = 0; i < img.size(); ++i) img[i] = double(rng.index(256)) / 255.0;
    write_pnm(tmp("in.ppm"), img);
    write_pnm(tmp("m.pgm"), TensorD({6, 6}));
    write_file(tmp("t.json"), transform_to_json(Transform(Affine2D<double>::from_translation(0.3, 0.1))));
    const Run r = run("warp --image " + tmp("in.ppm") + " --transform " + tmp("t.json") +
                      " --mask " + tmp("m.pgm") + " --out " + tmp("out.ppm"));
    CHECK(r.code == 0);
    CHECK(read_file(tmp("out.ppm")) == read_file(tmp("in.ppm")));

    write_pnm(tmp("m_small.pgm"), TensorD({5, 6}));
    CHECK(run("warp --image " + tmp("in.ppm") + " --transform " + tmp("t.json") + " --mask " +
              tmp("m_small.pgm") + " --out " + tmp("o2.ppm"))
              .code == 2);
  }

  TEST_CASE("corrupt image magic exits 2 naming the problem") {
    Scratch tmp("warp_magic");
    write_file(tmp("bad.ppm"), "P9\n1 1\n255\n\x01\x02\x03");
    write_file(tmp("id.json"), transform_to_json(Transform(Affine2D<double>::identity())));
    const Run r = run("warp --image " + tmp("bad.ppm") + " --transform " + tmp("id.json") +
                      " --out " + tmp("out.ppm"));
    CHECK(r.code == 2);
    CHECK(r.out.find("bad magic") != std::string::npos);
    CHECK(r.out.find("offset 0") != std::string::npos);
  }

  TEST_CASE("compose writes a flow container") {
    Scratch tmp("compose");
    write_pnm(tmp("m.pgm"), TensorD({4, 5}, 1.0));
    const auto shift = Affine2D<double>::from_translation(0.25, 0.0);
    write_file(tmp("t.json"), transform_to_json(Transform(shift)));
    const Run r = run("compose --mask " + tmp("m.pgm") + " --transform " + tmp("t.json") +
                      " --out " + tmp("f.dflw"));
    CHECK(r.code == 0);
    CHECK(decode_flow(read_file(tmp("f.dflw"))) == coarse_flow_affine(shift, 4, 5));
  }

  TEST_CASE("extract-affine recovers a relative translation") {
    Scratch tmp("extract");
    // Distinct principal variances pin down the SVD basis. 8-bit heatmaps lose precision, so
    // the bound is loose.
    const Mat2<double> cov = Vec2<double>(0.03, 0.01).asDiagonal();
    TensorD hs = gaussian_heatmap(Vec2<double>(0.1, 0.0), cov, 64).values();
    TensorD hd = gaussian_heatmap(Vec2<double>(-0.1, 0.1), cov, 64).values();
    hs.vec() /= hs.vec().maxCoeff();
    hd.vec() /= hd.vec().maxCoeff();
    write_pnm(tmp("s.pgm"), hs);
    write_pnm(tmp("d.pgm"), hd);
    const Run r = run("extract-affine --heatmap " + tmp("s.pgm") + " --driving " + tmp("d.pgm") +
                      " --out " + tmp("a.json"));
    CHECK(r.code == 0);
    const auto a = std::get<Affine2D<double>>(transform_from_json(read_file(tmp("a.json"))));
    CHECK((a.linear - Mat2<double>::Identity()).cwiseAbs().maxCoeff() < 2e-2);
    CHECK(std::abs(a.translation.x() - 0.2) < 2e-2);
    CHECK(std::abs(a.translation.y() + 0.1) < 2e-2);
  }

  TEST_CASE("grad-check passes, is reproducible, and catches a broken VJP") {
    const Run first = run("grad-check --seed 42 --size 4");
    CHECK(first.code == 0);
    CHECK(first.out.find("RESULT grad-check status=ok") != std::string::npos);
    const Run second = run("grad-check --seed 42 --size 4");
    CHECK(second.out == first.out);

    const Run broken = run("grad-check --perturb-vjp modconv");
    CHECK(broken.code == 1);
    CHECK(broken.out.find("op=modconv") != std::string::npos);
    CHECK(broken.out.find("grad-check failed: modconv") != std::string::npos);

    CHECK(run("grad-check --perturb-vjp nothing").code == 2);
  }

  TEST_CASE("train and generate are reproducible through files") {
    Scratch tmp("train");
    nlohmann::json cfg = {{"image_size", 32}, {"encoder_widths", {8, 8, 8}},
                          {"feature_channels", 8}, {"residual_blocks", 1},
                          {"decoder_widths", {8, 8, 8}}, {"output_kernel", 3},
                          {"expression_dim", 4}, {"batch_size", 2}, {"steps", 3}};
    write_file(tmp("cfg.json"), cfg.dump());
    const std::string base = "train --config " + tmp("cfg.json") + " --scenes 4 ";
    const Run a = run(base + "--checkpoint " + tmp("a.ck") + " --loss-csv " + tmp("a.csv"));
    const Run b = run(base + "--checkpoint " + tmp("b.ck") + " --loss-csv " + tmp("b.csv"));
    REQUIRE(a.code == 0);
    CHECK(a.out == b.out);
    CHECK(read_file(tmp("a.ck")) == read_file(tmp("b.ck")));
    CHECK(read_file(tmp("a.csv")) == read_file(tmp("b.csv")));
    CHECK(read_file(tmp("a.csv")).rfind("step,loss\n", 0) == 0);

    SceneSpec spec;
    spec.size = 32;
    spec.expression_dim = 4;
    const SyntheticScene s = render_scene(3, spec);
    write_pnm(tmp("src.ppm"), s.source);
    write_file(tmp("t.json"), transform_to_json(s.transform));
    const std::string gen = "generate --config " + tmp("cfg.json") + " --checkpoint " + tmp("a.ck") +
                            " --source " + tmp("src.ppm") + " --transform " + tmp("t.json") +
                            " --out ";
    CHECK(run(gen + tmp("g1.ppm") + " --mouth 0.8").code == 0);
    CHECK(run(gen + tmp("g2.ppm") + " --mouth 0.8").code == 0);
    CHECK(read_file(tmp("g1.ppm")) == read_file(tmp("g2.ppm")));
    CHECK(run(gen + tmp("g3.ppm") + " --mouth 1.5").code == 2);
  }

  TEST_CASE("accept reports per criterion") {
    Scratch tmp("accept");
    const Run r = run("accept --suite geometry --out " + tmp("report.json"));
    CHECK(r.code == 0);
    const auto report = nlohmann::json::parse(read_file(tmp("report.json")));
    CHECK(report["suite"] == "geometry");
    REQUIRE(report["criteria"].size() == 2);
    CHECK(report["criteria"][0]["id"] == 1);
    CHECK(report["criteria"][1]["id"] == 2);
    CHECK(report["criteria"][0]["passed"] == true);
    CHECK(run("accept --suite everything").code == 2);
  }

  TEST_CASE("flag handling") {
    CHECK(run("").code == 2);
    CHECK(run("warp --image a.ppm").code == 2);
    CHECK(run("grad-check --frobnicate").code == 2);
    CHECK(run("no-such-command").code == 2);
    CHECK(run("--help").code == 0);
  }
}
