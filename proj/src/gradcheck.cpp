#include "disco/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <string>

#include "disco/flow.hpp"
#include "disco/modconv.hpp"
#include "disco/pipeline.hpp"
#include "disco/synthbench.hpp"

namespace disco {

Eigen::VectorXd numeric_gradient(TensorD& t, const std::function<double()>& objective,
                                 double step) {
  Eigen::VectorXd g(t.size());
  for (Index i = 0; i < t.size(); ++i) {
    const double saved = t[i];
    t[i] = saved + step;
    const double up = objective();
    t[i] = saved - step;
    const double down = objective();
    t[i] = saved;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

double relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric) {
  if (analytic.size() != numeric.size()) {
    throw DomainError("relative_error: gradient sizes differ");
  }
  if (analytic.size() == 0) return 0.0;
  const double scale = std::max(analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff());
  if (scale == 0.0) return 0.0;
  return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

bool GradCheckReport::passed() const {
  return std::all_of(operations.begin(), operations.end(),
                     [](const OperationReport& r) { return r.passed(); });
}

namespace {

TensorD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

double inner(const TensorD& a, const TensorD& b) { return a.vec().dot(b.vec()); }

/// Stacks several gradient blocks into one vector.
Eigen::VectorXd stack(std::initializer_list<const Eigen::VectorXd*> parts) {
  Index n = 0;
  for (const auto* p : parts) n += p->size();
  Eigen::VectorXd out(n);
  Index at = 0;
  for (const auto* p : parts) {
    out.segment(at, p->size()) = *p;
    at += p->size();
  }
  return out;
}

/// Normalized coordinate whose pixel position keeps clear of integer
/// positions (where bilinear interpolation has kinks) and of the border clamp.
double safe_coordinate(Index n, Rng& rng) {
  if (n == 1 || rng.uniform() < 0.15) {
    const double beyond = rng.uniform(1.05, 1.4);
    return rng.uniform() < 0.5 ? -beyond : beyond;
  }
  const double cell = double(rng.index(n - 1));
  const double pixel = cell + rng.uniform(0.05, 0.95);
  return 2.0 * pixel / double(n - 1) - 1.0;
}

class Checker {
 public:
  explicit Checker(const GradCheckOptions& o) : opts_(o) {}

  void record(OperationReport& r, Eigen::VectorXd analytic, const Eigen::VectorXd& numeric) {
    if (opts_.perturb == r.name && analytic.size() > 0) {
      analytic[0] += 1e-3 * std::max(1.0, analytic.cwiseAbs().maxCoeff());
    }
    r.worst_relative_error = std::max(r.worst_relative_error, relative_error(analytic, numeric));
    ++r.instances;
  }

  OperationReport bilinear(Rng& rng) {
    OperationReport r{"bilinear_sample", 0, 0.0, kVjpTolerance};
    const Index s = opts_.size;
    for (Index k = 0; k < opts_.instances; ++k) {
      TensorD input = random_tensor({2, s, s + 1}, rng);
      TensorD coords({2, s, s});
      for (Index r0 = 0; r0 < s; ++r0) {
        for (Index c0 = 0; c0 < s; ++c0) {
          coords(0, r0, c0) = safe_coordinate(s + 1, rng);
          coords(1, r0, c0) = safe_coordinate(s, rng);
        }
      }
      FlowFieldD flow(coords);
      const TensorD up = random_tensor({2, s, s}, rng);
      const auto g = bilinear_sample_vjp(input, flow, up);
      auto f = [&] { return inner(up, bilinear_sample(input, flow)); };
      const Eigen::VectorXd n_in = numeric_gradient(input, f, opts_.step);
      const Eigen::VectorXd n_co = numeric_gradient(flow.coords, f, opts_.step);
      record(r, stack({&g.input.vec(), &g.coords.coords.vec()}), stack({&n_in, &n_co}));
    }
    return r;
  }

  OperationReport conv(Rng& rng) {
    OperationReport r{"conv2d", 0, 0.0, kVjpTolerance};
    const Index s = opts_.size;
    // Cycle through a 3×3 stride-1, 3×3 stride-2 and 7×7 few-output layout.
    const Index shapes[3][4] = {{2, 3, 3, 1}, {4, 3, 3, 2}, {3, 2, 7, 1}};
    for (Index k = 0; k < opts_.instances; ++k) {
      const auto& sh = shapes[k % 3];
      TensorD x = random_tensor({sh[1], s, s}, rng);
      TensorD w = random_tensor({sh[0], sh[1], sh[2], sh[2]}, rng);
      TensorD b = random_tensor({sh[0]}, rng);
      const Index stride = sh[3];
      const Index o = conv_out_extent(s, sh[2], stride);
      const TensorD up = random_tensor({sh[0], o, o}, rng);
      const auto g = conv2d_vjp(x, ConvKernel<double>(w, b), up, stride);
      auto f = [&] { return inner(up, conv2d(x, ConvKernel<double>(w, b), stride)); };
      const Eigen::VectorXd nx = numeric_gradient(x, f, opts_.step);
      const Eigen::VectorXd nw = numeric_gradient(w, f, opts_.step);
      const Eigen::VectorXd nb = numeric_gradient(b, f, opts_.step);
      record(r, stack({&g.input.vec(), &g.weights.vec(), &g.bias.vec()}), stack({&nx, &nw, &nb}));
    }
    return r;
  }

  OperationReport modconv(Rng& rng) {
    OperationReport r{"modconv", 0, 0.0, kVjpTolerance};
    const Index s = opts_.size;
    for (Index k = 0; k < opts_.instances; ++k) {
      TensorD x = random_tensor({3, s, s}, rng);
      TensorD w = random_tensor({2, 3, 3, 3}, rng);
      TensorD b = random_tensor({2}, rng);
      TensorD sc = random_tensor({3}, rng, 0.5, 1.5);
      const TensorD up = random_tensor({2, s, s}, rng);
      const auto g = modconv_vjp(x, ConvKernel<double>(w, b), ScaleVector<double>(sc),
                                 kDefaultDemodEps, up);
      auto f = [&] {
        return inner(up, modconv_forward(x, ConvKernel<double>(w, b), ScaleVector<double>(sc),
                                         kDefaultDemodEps));
      };
      const Eigen::VectorXd nx = numeric_gradient(x, f, opts_.step);
      const Eigen::VectorXd nw = numeric_gradient(w, f, opts_.step);
      const Eigen::VectorXd ns = numeric_gradient(sc, f, opts_.step);
      const Eigen::VectorXd nb = numeric_gradient(b, f, opts_.step);
      record(r, stack({&g.input.vec(), &g.weights.vec(), &g.scales.vec(), &g.bias.vec()}),
             stack({&nx, &nw, &ns, &nb}));
    }
    return r;
  }

  OperationReport scales(Rng& rng) {
    OperationReport r{"expression_scales", 0, 0.0, kVjpTolerance};
    for (Index k = 0; k < opts_.instances; ++k) {
      const ExpressionFeature<double> feat(random_tensor({5}, rng));
      ScaleHead<double> head{random_tensor({4, 5}, rng), random_tensor({4}, rng)};
      const TensorD up = random_tensor({4}, rng);
      const ScaleHead<double> g = expression_scales_vjp(feat, head, up);
      auto f = [&] { return inner(up, expression_scales(feat, head).scales); };
      const Eigen::VectorXd nw = numeric_gradient(head.weights, f, opts_.step);
      const Eigen::VectorXd nb = numeric_gradient(head.bias, f, opts_.step);
      record(r, stack({&g.weights.vec(), &g.bias.vec()}), stack({&nw, &nb}));
    }
    return r;
  }

  OperationReport loss_op(Rng& rng) {
    OperationReport r{"loss", 0, 0.0, kLossTolerance};
    const Index s = opts_.size;
    const SquaredError backend;
    for (Index k = 0; k < opts_.instances; ++k) {
      const TensorD target = random_tensor({3, s, s}, rng, 0.0, 1.0);
      TensorD pred(target.shape());
      // Keep every residual well away from the L1 kink at zero.
      for (Index i = 0; i < pred.size(); ++i) {
        const double mag = rng.uniform(0.01, 0.3);
        pred[i] = target[i] + (rng.uniform() < 0.5 ? -mag : mag);
      }
      const double lambda = k % 2 == 0 ? 0.0 : 0.5;
      const LossResult lr = loss(pred, target, lambda, &backend);
      auto f = [&] { return loss(pred, target, lambda, &backend).total; };
      record(r, lr.gradient.vec(), numeric_gradient(pred, f, opts_.step));
    }
    return r;
  }

 private:
  /// Mean squared error standing in for a perceptual network.
  struct SquaredError : PerceptualBackend {
    double evaluate(const TensorD& p, const TensorD& t, TensorD& grad) const override {
      const double n = double(p.size());
      grad.vec() = 2.0 * (p.vec() - t.vec()) / n;
      return (p.vec() - t.vec()).squaredNorm() / n;
    }
  };

  GradCheckOptions opts_;
};

}  // namespace

double pipeline_gradient_error(std::uint64_t seed, bool dense_motion, Index count, double step) {
  PipelineConfig cfg;
  cfg.image_size = 32;
  cfg.variant = dense_motion ? Variant::dense_motion : Variant::neural_mix;
  cfg.transform = dense_motion ? TransformKind::affine : TransformKind::tps;
  SceneSpec spec;
  spec.size = cfg.image_size;
  spec.transform = cfg.transform;
  const TrainingSample sample = make_sample(render_scene(seed, spec), cfg);
  ParameterSet params = init_parameters(cfg, seed);
  const ForwardBackward fb = forward_backward(sample.input, sample.target, params, cfg);

  Rng rng(seed ^ 0xD1B54A32D192ED03ull);
  const Index total = params.scalar_count();
  auto objective = [&] { return loss(generate(sample.input, params, cfg), sample.target, 0.0).total; };
  auto central = [&](TensorD& t, Index i, double h) {
    const double saved = t[i];
    t[i] = saved + h;
    const double up = objective();
    t[i] = saved - h;
    const double down = objective();
    t[i] = saved;
    return (up - down) / (2.0 * h);
  };
  // The generator is piecewise smooth (leaky ReLU, L1, bilinear taps). An
  // entry whose stencil straddles a kink gives a meaningless difference, so
  // it is detected by comparing stencils of width h and h/2 and redrawn.
  Eigen::VectorXd analytic(count), numeric(count);
  Index accepted = 0;
  for (Index attempt = 0; accepted < count; ++attempt) {
    if (attempt >= 8 * count) {
      throw NumericError("pipeline gradient check: too many non-smooth stencils");
    }
    Index flat = rng.index(total);
    std::size_t e = 0;
    while (flat >= params.entries()[e].second.size()) flat -= params.entries()[e++].second.size();
    TensorD& t = params.entries()[e].second;
    const double full = central(t, flat, step);
    const double half = central(t, flat, 0.5 * step);
    const double scale = std::max({std::abs(full), std::abs(half), 1e-12});
    if (std::abs(full - half) > 1e-2 * kPipelineTolerance * scale) continue;
    analytic[accepted] = fb.gradients.entries()[e].second[flat];
    numeric[accepted] = full;
    ++accepted;
  }
  return relative_error(analytic, numeric);
}

GradCheckReport run_grad_check(const GradCheckOptions& options) {
  if (options.size < 2) throw DomainError("grad-check: size must be >= 2");
  if (options.instances < 1) throw DomainError("grad-check: instances must be >= 1");
  if (!(options.step > 0.0)) throw DomainError("grad-check: step must be > 0");
  static const std::set<std::string> known{"bilinear_sample", "conv2d", "modconv",
                                           "expression_scales", "loss", "pipeline"};
  if (!options.perturb.empty() && !known.count(options.perturb)) {
    throw DomainError("grad-check: cannot perturb unknown operation '" + options.perturb + "'");
  }
  Checker check(options);
  Rng rng(options.seed);
  GradCheckReport report;
  report.operations.push_back(check.bilinear(rng));
  report.operations.push_back(check.conv(rng));
  report.operations.push_back(check.modconv(rng));
  report.operations.push_back(check.scales(rng));
  report.operations.push_back(check.loss_op(rng));
  if (options.include_pipeline) {
    OperationReport r{"pipeline", 2, 0.0, kPipelineTolerance};
    r.worst_relative_error = std::max(pipeline_gradient_error(options.seed, true),
                                      pipeline_gradient_error(options.seed, false));
    if (options.perturb == r.name) r.worst_relative_error += 1.0;
    report.operations.push_back(r);
  }
  return report;
}

std::string format_grad_check(const GradCheckReport& report) {
  std::string out;
  char line[256];
  for (const auto& op : report.operations) {
    std::snprintf(line, sizeof line,
                  "RESULT op=%s instances=%lld worst_rel_error=%.3e tolerance=%.0e status=%s\n",
                  op.name.c_str(), static_cast<long long>(op.instances), op.worst_relative_error,
                  op.tolerance, op.passed() ? "ok" : "FAIL");
    out += line;
  }
  out += std::string("RESULT grad-check status=") + (report.passed() ? "ok" : "FAIL") + "\n";
  return out;
}

}  // namespace disco
