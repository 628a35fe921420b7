// disco: command-line front end for the motion-transfer library.
//
// Exit codes: 0 success, 1 a check or threshold failed, 2 bad flags, bad
// input files or failed preconditions.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "disco/acceptance.hpp"
#include "disco/errors.hpp"
#include "disco/flow.hpp"
#include "disco/geometry.hpp"
#include "disco/gradcheck.hpp"
#include "disco/io.hpp"
#include "disco/modconv.hpp"
#include "disco/pipeline.hpp"
#include "disco/synthbench.hpp"

namespace {

using namespace disco;

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kInvalid = 2;

void result(const std::string& line) { std::cout << "RESULT " << line << '\n'; }

std::string num(double v) { return format_number(v); }

PipelineConfig load_config(const std::string& path) {
  return path.empty() ? PipelineConfig{} : config_from_json(read_file(path));
}

/// A single-channel PGM as an [H,W] tensor.
TensorD read_gray(const std::string& path, const char* what) {
  const TensorD t = read_pnm(path);
  if (t.dim(0) != 1) throw DomainError(std::string(what) + " must be a grayscale PGM (P5)");
  return t.reshaped({t.dim(1), t.dim(2)});
}

// ---- fit-tps -----------------------------------------------------------------

struct FitTpsArgs {
  std::string src, dst, out;
  double reg = 0.0;
};

int fit_tps(const FitTpsArgs& a) {
  const PointMatrix<double> src = keypoints_from_json(read_file(a.src));
  const PointMatrix<double> dst = keypoints_from_json(read_file(a.dst));
  if (src.rows() != dst.rows()) {
    throw DomainError("keypoint count mismatch: --src has " + std::to_string(src.rows()) +
                      " points, --dst has " + std::to_string(dst.rows()));
  }
  // The spline maps destination coordinates back to source coordinates,
  // which is the backward map `warp` expects.
  const auto tps = tps_fit(KeypointSet<double>(dst), KeypointSet<double>(src), a.reg);
  double residual = 0.0;
  for (Index i = 0; i < dst.rows(); ++i) {
    const Vec2<double> q = tps_eval(tps, Vec2<double>(dst(i, 0), dst(i, 1)));
    residual = std::max(residual, (q - src.row(i).transpose()).cwiseAbs().maxCoeff());
  }
  write_file(a.out, transform_to_json(Transform(tps)));
  result("points=" + std::to_string(dst.rows()));
  result("max_interpolation_residual=" + num(residual));
  result("max_abs_weight=" + num(tps.weights.cwiseAbs().maxCoeff()));
  result("side_condition_residual=" + num(tps_side_condition_residual(tps)));
  return kOk;
}

// ---- extract-affine ------------------------------------------------------------

struct ExtractArgs {
  std::string heatmap, driving, out;
};

int extract_affine(const ExtractArgs& a) {
  Affine2D<double> t =
      heatmap_to_affine(Heatmap<double>::normalized(read_gray(a.heatmap, "--heatmap")));
  if (!a.driving.empty()) {
    t = relative_affine(t, heatmap_to_affine(
                               Heatmap<double>::normalized(read_gray(a.driving, "--driving"))));
  }
  write_file(a.out, transform_to_json(Transform(t)));
  result("linear=" + num(t.linear(0, 0)) + "," + num(t.linear(0, 1)) + "," + num(t.linear(1, 0)) +
         "," + num(t.linear(1, 1)));
  result("translation=" + num(t.translation.x()) + "," + num(t.translation.y()));
  return kOk;
}

// ---- warp / compose ------------------------------------------------------------

struct WarpArgs {
  std::string image, transform, out, mask;
};

FlowFieldD flow_for(const Transform& t, Index h, Index w, const std::string& mask_path) {
  FlowFieldD flow = coarse_flow(t, h, w);
  if (mask_path.empty()) return flow;
  MotionMask<double> mask(read_gray(mask_path, "--mask"));
  if (mask.height() != h || mask.width() != w) {
    throw DomainError("--mask is " + std::to_string(mask.height()) + "x" +
                      std::to_string(mask.width()) + " but the target grid is " +
                      std::to_string(h) + "x" + std::to_string(w));
  }
  return compose_flow(mask, identity_flow<double>(h, w), flow);
}

int warp(const WarpArgs& a) {
  const TensorD image = read_pnm(a.image);
  const Transform t = transform_from_json(read_file(a.transform));
  const FlowFieldD flow = flow_for(t, image.dim(1), image.dim(2), a.mask);
  write_pnm(a.out, warp_features(image, flow));
  result("size=" + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(1)));
  result("kind=" + to_string(kind_of(t)));
  return kOk;
}

struct ComposeArgs {
  std::string mask, transform, out;
};

int compose(const ComposeArgs& a) {
  const TensorD m = read_gray(a.mask, "--mask");
  const Transform t = transform_from_json(read_file(a.transform));
  const FlowFieldD flow = flow_for(t, m.dim(0), m.dim(1), a.mask);
  write_file(a.out, encode_flow(flow));
  result("size=" + std::to_string(flow.width()) + "x" + std::to_string(flow.height()));
  result("mask_mean=" + num(m.vec().mean()));
  return kOk;
}

// ---- generate / train -------------------------------------------------------------

struct GenerateArgs {
  std::string config, checkpoint, source, transform, out;
  double eyes = 0.5, mouth = 0.5;
  std::uint64_t seed = 42;
};

int generate_cmd(const GenerateArgs& a) {
  PipelineConfig cfg = load_config(a.config);
  const ParameterSet params = a.checkpoint.empty()
                                  ? init_parameters(cfg, a.seed)
                                  : decode_checkpoint(read_file(a.checkpoint));
  const TensorD source = read_pnm(a.source);
  if (source.dim(1) != cfg.image_size || source.dim(2) != cfg.image_size) {
    throw DomainError("--source must be " + std::to_string(cfg.image_size) + "x" +
                      std::to_string(cfg.image_size) + " to match the config");
  }
  const Transform t = transform_from_json(read_file(a.transform));
  const auto expr = encode_expression(Expression{a.eyes, a.mouth}, cfg.expression_dim);
  const TensorD out = generate(source, t, expr, params, cfg);
  write_pnm(a.out, out);
  result("mean_intensity=" + num(out.vec().mean()));
  return kOk;
}

struct TrainArgs {
  std::string config, checkpoint, loss_csv_path;
  std::optional<std::uint64_t> seed;
  std::optional<Index> steps;
  Index scenes = 160;
  std::uint64_t data_seed = 1000;
};

int train_cmd(const TrainArgs& a) {
  PipelineConfig cfg = load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.steps) cfg.steps = *a.steps;
  cfg.validate();
  if (a.scenes < 1) throw DomainError("--scenes must be at least 1");
  SceneSpec spec;
  spec.size = cfg.image_size;
  spec.transform = cfg.transform;
  spec.expression_dim = cfg.expression_dim;
  std::vector<TrainingSample> data;
  for (Index i = 0; i < a.scenes; ++i) {
    data.push_back(make_sample(render_scene(a.data_seed + std::uint64_t(i), spec), cfg));
  }
  TrainState state = train(data, cfg);
  write_file(a.checkpoint, encode_checkpoint(state.params));
  if (!a.loss_csv_path.empty()) write_file(a.loss_csv_path, loss_csv(state.loss_history));
  result("steps=" + std::to_string(state.step));
  result("first_loss=" + num(state.loss_history.empty() ? 0.0 : state.loss_history.front()));
  result("final_loss=" + num(state.loss_history.empty() ? 0.0 : state.loss_history.back()));
  return kOk;
}

// ---- grad-check / bench / accept ---------------------------------------------------

int grad_check(const GradCheckOptions& o) {
  const GradCheckReport report = run_grad_check(o);
  std::cout << format_grad_check(report);
  if (!report.passed()) {
    for (const auto& op : report.operations) {
      if (!op.passed()) std::cerr << "grad-check failed: " << op.name << '\n';
    }
    return kCheckFailed;
  }
  return kOk;
}

struct BenchArgs {
  std::uint64_t seed = 42;
  Index repeats = 3;
};

int bench(const BenchArgs& a) {
  if (a.repeats < 1) throw DomainError("--repeats must be at least 1");
  using Clock = std::chrono::steady_clock;
  for (Variant variant : {Variant::dense_motion, Variant::neural_mix}) {
    PipelineConfig cfg;
    cfg.variant = variant;
    cfg.seed = a.seed;
    SceneSpec spec;
    const TrainingSample s = make_sample(render_scene(a.seed, spec), cfg);
    const ParameterSet p = init_parameters(cfg, a.seed);
    double fwd = 0.0, fb = 0.0;
    for (Index r = 0; r < a.repeats; ++r) {
      auto t0 = Clock::now();
      generate(s.input, p, cfg);
      auto t1 = Clock::now();
      forward_backward(s.input, s.target, p, cfg);
      auto t2 = Clock::now();
      fwd += std::chrono::duration<double, std::milli>(t1 - t0).count();
      fb += std::chrono::duration<double, std::milli>(t2 - t1).count();
    }
    const std::string tag = "variant=" + to_string(variant);
    char line[160];
    std::snprintf(line, sizeof line, "%s forward_ms=%.2f forward_backward_ms=%.2f", tag.c_str(),
                  fwd / double(a.repeats), fb / double(a.repeats));
    result(line);
  }
  result("threads=" + std::to_string(worker_threads()));
  return kOk;
}

struct AcceptArgs {
  std::string suite = "all", out;
  std::uint64_t seed = 42;
};

int accept(const AcceptArgs& a) {
  const Suite suite = suite_from_string(a.suite);
  AcceptanceOptions o;
  o.seed = a.seed;
  o.log = [](const std::string& m) { std::cerr << m << '\n'; };
  const auto results = run_acceptance(suite, o);
  if (!a.out.empty()) write_file(a.out, acceptance_report_json(suite, results));
  bool all = true;
  for (const auto& r : results) {
    result(summary_line(r));
    all = all && r.passed();
  }
  result(std::string("accept suite=") + a.suite + " status=" + (all ? "ok" : "FAIL"));
  return all ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geometric-bottleneck motion transfer: fitting, warping, training and checks"};
  app.require_subcommand(1);

  FitTpsArgs fit;
  auto* c_fit = app.add_subcommand("fit-tps", "Fit a thin-plate spline mapping --dst points to --src points");
  c_fit->add_option("--src", fit.src, "Source keypoints JSON")->required();
  c_fit->add_option("--dst", fit.dst, "Destination keypoints JSON")->required();
  c_fit->add_option("--reg", fit.reg, "Tikhonov regularization (>= 0)")->capture_default_str();
  c_fit->add_option("--out", fit.out, "Output transform JSON")->required();

  ExtractArgs ex;
  auto* c_ex = app.add_subcommand("extract-affine", "Affine transform from heatmap moments");
  c_ex->add_option("--heatmap", ex.heatmap, "Source heatmap PGM")->required();
  c_ex->add_option("--driving", ex.driving, "Driving heatmap PGM; output becomes the relative transform");
  c_ex->add_option("--out", ex.out, "Output transform JSON")->required();

  WarpArgs wa;
  auto* c_warp = app.add_subcommand("warp", "Backward-warp an image by a transform");
  c_warp->add_option("--image", wa.image, "Input PPM/PGM")->required();
  c_warp->add_option("--transform", wa.transform, "Transform JSON")->required();
  c_warp->add_option("--out", wa.out, "Output PPM/PGM")->required();
  c_warp->add_option("--mask", wa.mask, "Motion mask PGM blending against the identity flow");

  ComposeArgs co;
  auto* c_co = app.add_subcommand("compose", "Blend a transform's flow with the identity under a mask");
  c_co->add_option("--mask", co.mask, "Motion mask PGM")->required();
  c_co->add_option("--transform", co.transform, "Transform JSON")->required();
  c_co->add_option("--out", co.out, "Output flow container")->required();

  GenerateArgs ge;
  auto* c_gen = app.add_subcommand("generate", "Run the generator on one source frame");
  c_gen->add_option("--config", ge.config, "Pipeline config JSON");
  c_gen->add_option("--checkpoint", ge.checkpoint, "Parameter checkpoint (default: seeded init)");
  c_gen->add_option("--source", ge.source, "Source PPM")->required();
  c_gen->add_option("--transform", ge.transform, "Driving transform JSON")->required();
  c_gen->add_option("--eyes", ge.eyes, "Eye openness in [0,1]")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  c_gen->add_option("--mouth", ge.mouth, "Mouth openness in [0,1]")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  c_gen->add_option("--seed", ge.seed, "Seed for the initial parameters")->capture_default_str();
  c_gen->add_option("--out", ge.out, "Output PPM")->required();

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train on seeded synthetic scenes");
  c_tr->add_option("--config", tr.config, "Pipeline config JSON");
  c_tr->add_option("--seed", tr.seed, "Overrides the config seed");
  c_tr->add_option("--steps", tr.steps, "Overrides the config step count");
  c_tr->add_option("--scenes", tr.scenes, "Number of training scenes")->capture_default_str();
  c_tr->add_option("--data-seed", tr.data_seed, "Seed of the first scene")->capture_default_str();
  c_tr->add_option("--checkpoint", tr.checkpoint, "Output checkpoint")->required();
  c_tr->add_option("--loss-csv", tr.loss_csv_path, "Output per-step loss CSV");

  GradCheckOptions gc;
  auto* c_gc = app.add_subcommand("grad-check", "Compare every VJP with central differences");
  c_gc->add_option("--seed", gc.seed, "Seed")->capture_default_str();
  c_gc->add_option("--size", gc.size, "Spatial extent of the random instances")->check(CLI::Range(2, 64))->capture_default_str();
  c_gc->add_option("--instances", gc.instances, "Instances per operation")->check(CLI::Range(1, 100000))->capture_default_str();
  c_gc->add_flag("!--no-pipeline", gc.include_pipeline, "Skip the whole-generator check");
  c_gc->add_option("--perturb-vjp", gc.perturb, "Test hook: corrupt the named operation's gradient");

  BenchArgs be;
  auto* c_be = app.add_subcommand("bench", "Time the generator forward and backward passes");
  c_be->add_option("--seed", be.seed, "Seed")->capture_default_str();
  c_be->add_option("--repeats", be.repeats, "Timed repetitions")->capture_default_str();

  AcceptArgs ac;
  auto* c_ac = app.add_subcommand("accept", "Run the acceptance suites");
  c_ac->add_option("--suite", ac.suite, "all, geometry, flow, modconv or pipeline")->capture_default_str();
  c_ac->add_option("--out", ac.out, "JSON report path");
  c_ac->add_option("--seed", ac.seed, "Seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInvalid;
  }

  try {
    if (*c_fit) return fit_tps(fit);
    if (*c_ex) return extract_affine(ex);
    if (*c_warp) return warp(wa);
    if (*c_co) return compose(co);
    if (*c_gen) return generate_cmd(ge);
    if (*c_tr) return train_cmd(tr);
    if (*c_gc) return grad_check(gc);
    if (*c_be) return bench(be);
    if (*c_ac) return accept(ac);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  }
  return kInvalid;
}
