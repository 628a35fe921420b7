#include "disco/pipeline.hpp"

#include <cmath>
#include <cstdlib>
#include <thread>

#include "disco/synthbench.hpp"

namespace disco {

std::string to_string(Variant v) {
  return v == Variant::dense_motion ? "dense_motion" : "neural_mix";
}

Variant variant_from_string(const std::string& name) {
  if (name == "dense_motion" || name == "dense-motion") return Variant::dense_motion;
  if (name == "neural_mix" || name == "neural-mix") return Variant::neural_mix;
  throw DomainError("unknown variant '" + name + "' (expected dense_motion or neural_mix)");
}

void PipelineConfig::validate() const {
  if (image_size < 8 || image_size % 8 != 0) {
    throw DomainError("pipeline config: image_size must be a positive multiple of 8");
  }
  if (encoder_widths.size() != 3 || decoder_widths.size() != 3) {
    throw DomainError("pipeline config: encoder_widths and decoder_widths need 3 entries each");
  }
  for (Index w : encoder_widths) {
    if (w < 1) throw DomainError("pipeline config: encoder widths must be >= 1");
  }
  for (Index w : decoder_widths) {
    if (w < 1) throw DomainError("pipeline config: decoder widths must be >= 1");
  }
  if (feature_channels < 1 || residual_blocks < 0 || expression_dim < 1) {
    throw DomainError("pipeline config: bad feature_channels/residual_blocks/expression_dim");
  }
  if (output_kernel < 1 || output_kernel % 2 == 0) {
    throw DomainError("pipeline config: output_kernel must be odd");
  }
  if (!(demod_eps >= 0.0) || !(cov_eps > 0.0) || !(tps_reg >= 0.0)) {
    throw DomainError("pipeline config: eps values out of range");
  }
  if (!(perceptual_weight >= 0.0)) throw DomainError("pipeline config: λ must be >= 0");
  if (!(learning_rate >= 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) ||
      !(adam_eps > 0.0)) {
    throw DomainError("pipeline config: bad optimizer hyperparameters");
  }
  if (batch_size < 1 || steps < 0) throw DomainError("pipeline config: bad batch_size/steps");
}

// ---------------------------------------------------------------------------
// ParameterSet
// ---------------------------------------------------------------------------

void ParameterSet::add(std::string name, TensorD value) {
  if (index_.count(name)) throw DomainError("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
}

TensorD& ParameterSet::at(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw DomainError("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

const TensorD& ParameterSet::at(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw DomainError("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

Index ParameterSet::scalar_count() const {
  Index n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const auto& [name, t] : entries_) out.add(name, TensorD(t.shape()));
  return out;
}

void ParameterSet::accumulate(const ParameterSet& other) {
  if (other.entries_.size() != entries_.size()) throw DomainError("parameter layout mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].second.shape() != other.entries_[i].second.shape()) {
      throw DomainError("parameter layout mismatch at '" + entries_[i].first + "'");
    }
    entries_[i].second.vec() += other.entries_[i].second.vec();
  }
}

void ParameterSet::scale(double factor) {
  for (auto& [name, t] : entries_) t.vec() *= factor;
}

namespace {

Index head_channels(const PipelineConfig& c) {
  return c.feature_channels + 1 + (c.variant == Variant::dense_motion ? 1 : 0);
}

TensorD random_normal(Shape shape, double stddev, Rng& rng) {
  TensorD t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = stddev * rng.normal();
  return t;
}

void add_conv(ParameterSet& p, const std::string& name, Index out_c, Index in_c, Index k,
              double gain, Rng& rng) {
  const double fan_in = double(in_c * k * k);
  p.add(name + ".w", random_normal({out_c, in_c, k, k}, gain / std::sqrt(fan_in), rng));
  p.add(name + ".b", TensorD({out_c}));
}

const double kLeakyGain = std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope));

std::string res_name(Index b) { return "res" + std::to_string(b); }

/// Kernels and scale heads unpacked once from a ParameterSet so every
/// sample in a batch shares them.
class Network {
 public:
  explicit Network(const ParameterSet& p) {
    for (const auto& [name, t] : p.entries()) {
      const auto dot = name.find('.');
      const std::string layer = name.substr(0, dot);
      const std::string field = name.substr(dot + 1);
      if (field == "w") convs_.emplace(layer, ConvKernel<double>(t, p.at(layer + ".b")));
      if (field == "scale.w") heads_.emplace(layer, ScaleHead<double>{t, p.at(layer + ".scale.b")});
    }
  }

  const ConvKernel<double>& conv(const std::string& layer) const { return find(convs_, layer); }
  const ScaleHead<double>& head(const std::string& layer) const { return find(heads_, layer); }

 private:
  template <typename Map>
  static const typename Map::mapped_type& find(const Map& m, const std::string& layer) {
    const auto it = m.find(layer);
    if (it == m.end()) throw DomainError("network has no layer '" + layer + "'");
    return it->second;
  }

  std::map<std::string, ConvKernel<double>> convs_;
  std::map<std::string, ScaleHead<double>> heads_;
};

TensorD concat_channels(const TensorD& a, const TensorD& b) {
  TensorD out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  out.vec().head(a.size()) = a.vec();
  out.vec().tail(b.size()) = b.vec();
  return out;
}

TensorD channel_slice(const TensorD& t, Index begin, Index count) {
  const Index plane = t.dim(1) * t.dim(2);
  return TensorD({count, t.dim(1), t.dim(2)}, t.vec().segment(begin * plane, count * plane));
}

// ---- traced forward passes ------------------------------------------------

struct EncoderTrace {
  TensorD input;                  // [6,H,W]
  std::vector<TensorD> pre;       // pre-activations of the five hidden convs
  std::vector<TensorD> post;      // their activations
  TensorD heads;                  // raw head output
  TensorD confidence;             // sigmoid, [1,h,w]
  TensorD mask;                   // sigmoid, [1,h,w]; empty for neural mix
  TensorD feature;                // [C,h,w]
};

constexpr Index kEncoderStrides[5] = {2, 2, 2, 1, 1};

EncoderTrace encode_traced(const TensorD& source, const TensorD& transformed, const Network& net,
                           const PipelineConfig& config) {
  require_rank(source, 3, "encode source");
  if (source.shape() != transformed.shape()) {
    throw DomainError("encode: source " + shape_string(source.shape()) +
                      " and transformed source " + shape_string(transformed.shape()) +
                      " differ in extent");
  }
  if (source.dim(1) != config.image_size || source.dim(2) != config.image_size) {
    throw DomainError("encode: expected " + std::to_string(config.image_size) + "x" +
                      std::to_string(config.image_size) + " frames, got " +
                      shape_string(source.shape()));
  }
  EncoderTrace tr;
  tr.input = concat_channels(source, transformed);
  for (Index i = 0; i < 5; ++i) {
    const TensorD& x = i == 0 ? tr.input : tr.post.back();
    tr.pre.push_back(conv2d(x, net.conv("enc" + std::to_string(i)), kEncoderStrides[i]));
    tr.post.push_back(leaky_relu(tr.pre.back()));
  }
  tr.heads = conv2d(tr.post.back(), net.conv("head"));
  const Index c = config.feature_channels;
  tr.feature = channel_slice(tr.heads, 0, c);
  tr.confidence = sigmoid(channel_slice(tr.heads, c, 1));
  if (config.variant == Variant::dense_motion) tr.mask = sigmoid(channel_slice(tr.heads, c + 1, 1));
  return tr;
}

struct AlignTrace {
  FlowFieldD identity;
  FlowFieldD composed;
  TensorD aligned;
};

AlignTrace align_traced(const TensorD& feature, const TensorD& mask, const FlowFieldD& coarse,
                        Variant variant) {
  AlignTrace tr;
  if (variant == Variant::neural_mix) {
    tr.aligned = feature;
    return tr;
  }
  const Index h = feature.dim(1), w = feature.dim(2);
  if (coarse.height() != h || coarse.width() != w) {
    throw DomainError("align: coarse flow " + shape_string(coarse.coords.shape()) +
                      " does not match feature " + shape_string(feature.shape()));
  }
  tr.identity = identity_flow<double>(h, w);
  tr.composed = compose_flow(MotionMask<double>(mask.reshaped({h, w})), tr.identity, coarse);
  tr.aligned = warp_features(feature, tr.composed);
  return tr;
}

struct DecoderTrace {
  std::vector<TensorD> block_in;     // h_b
  std::vector<TensorD> block_pre;    // modconv output before activation
  std::vector<ScaleVector<double>> scales;
  TensorD res_out;                   // output of the last residual block
  std::vector<TensorD> up_in;        // upsampled activations
  std::vector<TensorD> up_pre;       // conv outputs before activation
  std::vector<TensorD> up_post;
  TensorD out_in;
  TensorD output;                    // sigmoid RGB
};

DecoderTrace decode_traced(const TensorD& encoded, const ExpressionFeature<double>& expression,
                           const Network& net, const PipelineConfig& config) {
  require_rank(encoded, 3, "decode input");
  if (encoded.dim(0) != config.feature_channels) {
    throw DomainError("decode: expected " + std::to_string(config.feature_channels) +
                      " feature channels, got " + shape_string(encoded.shape()));
  }
  if (expression.size() != config.expression_dim) {
    throw DomainError("decode: expression feature has dimension " +
                      std::to_string(expression.size()) + ", config expects " +
                      std::to_string(config.expression_dim));
  }
  DecoderTrace tr;
  TensorD h = encoded;
  for (Index b = 0; b < config.residual_blocks; ++b) {
    const std::string name = res_name(b);
    tr.scales.push_back(expression_scales(expression, net.head(name)));
    tr.block_pre.push_back(
        modconv_forward(h, net.conv(name), tr.scales.back(), config.demod_eps));
    tr.block_in.push_back(h);
    h.vec() += leaky_relu(tr.block_pre.back()).vec();
  }
  tr.res_out = std::move(h);
  for (Index u = 0; u < 3; ++u) {
    tr.up_in.push_back(upsample2x(u == 0 ? tr.res_out : tr.up_post.back()));
    tr.up_pre.push_back(conv2d(tr.up_in.back(), net.conv("up" + std::to_string(u))));
    tr.up_post.push_back(leaky_relu(tr.up_pre.back()));
  }
  tr.out_in = tr.up_post.back();
  tr.output = sigmoid(conv2d(tr.out_in, net.conv("out")));
  return tr;
}

void add_grads(ParameterSet& g, const std::string& name, const ConvGradients<double>& cg) {
  g.at(name + ".w").vec() += cg.weights.vec();
  g.at(name + ".b").vec() += cg.bias.vec();
}

}  // namespace

ParameterSet init_parameters(const PipelineConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ParameterSet p;
  const auto& ew = config.encoder_widths;
  add_conv(p, "enc0", ew[0], 6, 3, kLeakyGain, rng);
  add_conv(p, "enc1", ew[1], ew[0], 3, kLeakyGain, rng);
  add_conv(p, "enc2", ew[2], ew[1], 3, kLeakyGain, rng);
  add_conv(p, "enc3", ew[2], ew[2], 1, kLeakyGain, rng);
  add_conv(p, "enc4", ew[2], ew[2], 1, kLeakyGain, rng);
  add_conv(p, "head", head_channels(config), ew[2], 1, 1.0, rng);
  // Start with the confidence gate mostly open.
  p.at("head.b")[config.feature_channels] = 2.0;

  const Index c = config.feature_channels;
  for (Index b = 0; b < config.residual_blocks; ++b) {
    const std::string name = res_name(b);
    add_conv(p, name, c, c, 3, 1.0, rng);
    // Zero head weights give s == 1 at initialization.
    p.add(name + ".scale.w", TensorD({c, config.expression_dim}));
    p.add(name + ".scale.b", TensorD({c}));
  }
  const auto& dw = config.decoder_widths;
  add_conv(p, "up0", dw[0], c, 3, kLeakyGain, rng);
  add_conv(p, "up1", dw[1], dw[0], 3, kLeakyGain, rng);
  add_conv(p, "up2", dw[2], dw[1], 3, kLeakyGain, rng);
  add_conv(p, "out", 3, dw[2], config.output_kernel, 0.5, rng);
  return p;
}

GeneratorInput prepare_input(const TensorD& source, const Transform& transform,
                             const ExpressionFeature<double>& expression,
                             const PipelineConfig& /*config*/) {
  require_rank(source, 3, "generator source");
  if (source.dim(0) != 3) throw DomainError("generator source must have 3 channels");
  const FlowFieldD image_flow = coarse_flow(transform, source.dim(1), source.dim(2));
  return {source, warp_features(source, image_flow),
          coarse_flow(transform, source.dim(1) / 8, source.dim(2) / 8), expression};
}

EncoderOutput encode(const TensorD& source, const TensorD& transformed_source,
                     const ParameterSet& params, const PipelineConfig& config) {
  EncoderTrace tr = encode_traced(source, transformed_source, Network(params), config);
  std::optional<MotionMask<double>> mask;
  if (!tr.mask.empty()) mask.emplace(tr.mask.reshaped({tr.mask.dim(1), tr.mask.dim(2)}));
  return {std::move(tr.feature), ConfidenceMap<double>(std::move(tr.confidence)), std::move(mask)};
}

TensorD align(const EncoderOutput& enc, const FlowFieldD& coarse_flow, Variant variant) {
  if ((variant == Variant::dense_motion) != enc.mask.has_value()) {
    throw DomainError(std::string("align: ") +
                      (enc.mask ? "neural-mix variant given a motion mask"
                                : "dense-motion variant requires a motion mask"));
  }
  if (variant == Variant::neural_mix) return enc.feature;
  const TensorD& m = enc.mask->values();
  return align_traced(enc.feature, m.reshaped({1, m.dim(0), m.dim(1)}), coarse_flow, variant)
      .aligned;
}

TensorD decode(const TensorD& encoded, const ExpressionFeature<double>& expression,
               const ParameterSet& params, const PipelineConfig& config) {
  return decode_traced(encoded, expression, Network(params), config).output;
}

TensorD generate(const GeneratorInput& input, const ParameterSet& params,
                 const PipelineConfig& config) {
  const EncoderOutput enc = encode(input.source, input.transformed_source, params, config);
  const TensorD aligned = align(enc, input.coarse_flow, config.variant);
  return decode(apply_confidence(enc.confidence, aligned), input.expression, params, config);
}

TensorD generate(const TensorD& source, const Transform& transform,
                 const ExpressionFeature<double>& expression, const ParameterSet& params,
                 const PipelineConfig& config) {
  return generate(prepare_input(source, transform, expression, config), params, config);
}

LossResult loss(const TensorD& predicted, const TensorD& target, double lambda,
                const PerceptualBackend* backend) {
  if (predicted.shape() != target.shape()) {
    throw DomainError("loss: shape mismatch " + shape_string(predicted.shape()) + " vs " +
                      shape_string(target.shape()));
  }
  if (!(lambda >= 0.0)) throw DomainError("loss: λ must be >= 0");
  if (lambda > 0.0 && backend == nullptr) {
    throw ConfigError("loss: λ > 0 but no perceptual backend is registered");
  }
  const double n = double(predicted.size());
  LossResult r{0.0, 0.0, 0.0, TensorD(predicted.shape())};
  for (Index i = 0; i < predicted.size(); ++i) {
    const double d = predicted[i] - target[i];
    r.l1 += std::abs(d);
    r.gradient[i] = d > 0.0 ? 1.0 / n : (d < 0.0 ? -1.0 / n : 0.0);
  }
  r.l1 /= n;
  r.total = r.l1;
  if (lambda > 0.0) {
    TensorD g(predicted.shape());
    r.perceptual = backend->evaluate(predicted, target, g);
    r.total += lambda * r.perceptual;
    r.gradient.vec() += lambda * g.vec();
  }
  return r;
}

namespace {

ForwardBackward forward_backward(const GeneratorInput& input, const TensorD& target,
                                 const ParameterSet& params, const Network& net,
                                 const PipelineConfig& config, const PerceptualBackend* backend) {
  const EncoderTrace enc = encode_traced(input.source, input.transformed_source, net, config);
  const AlignTrace al = align_traced(enc.feature, enc.mask, input.coarse_flow, config.variant);
  const ConfidenceMap<double> conf(enc.confidence);
  const TensorD encoded = apply_confidence(conf, al.aligned);
  const DecoderTrace dec = decode_traced(encoded, input.expression, net, config);
  LossResult lr = loss(dec.output, target, config.perceptual_weight, backend);

  ParameterSet g = params.zeros_like();

  // Decoder, back to front.
  TensorD grad = sigmoid_vjp(dec.output, std::move(lr.gradient));
  {
    auto cg = conv2d_vjp(dec.out_in, net.conv("out"), grad);
    add_grads(g, "out", cg);
    grad = std::move(cg.input);
  }
  for (Index u = 2; u >= 0; --u) {
    const std::string name = "up" + std::to_string(u);
    grad = leaky_relu_vjp(dec.up_pre[u], std::move(grad));
    auto cg = conv2d_vjp(dec.up_in[u], net.conv(name), grad);
    add_grads(g, name, cg);
    grad = upsample2x_vjp(u == 0 ? dec.res_out : dec.up_post[u - 1], cg.input);
  }
  for (Index b = config.residual_blocks - 1; b >= 0; --b) {
    const std::string name = res_name(b);
    const TensorD dz = leaky_relu_vjp(dec.block_pre[b], grad);
    auto mg = modconv_vjp(dec.block_in[b], net.conv(name), dec.scales[b], config.demod_eps, dz);
    g.at(name + ".w").vec() += mg.weights.vec();
    g.at(name + ".b").vec() += mg.bias.vec();
    const ScaleHead<double> sg = expression_scales_vjp(input.expression, net.head(name), mg.scales);
    g.at(name + ".scale.w").vec() += sg.weights.vec();
    g.at(name + ".scale.b").vec() += sg.bias.vec();
    grad.vec() += mg.input.vec();
  }

  // E = C ∘ F_A.
  const Index c = config.feature_channels, fh = encoded.dim(1), fw = encoded.dim(2);
  const Index plane = fh * fw;
  TensorD grad_aligned(al.aligned.shape());
  TensorD grad_conf({1, fh, fw});
  for (Index ch = 0; ch < c; ++ch) {
    const auto up = grad.vec().segment(ch * plane, plane);
    grad_aligned.vec().segment(ch * plane, plane) = up.cwiseProduct(enc.confidence.vec());
    grad_conf.vec() += up.cwiseProduct(al.aligned.vec().segment(ch * plane, plane));
  }

  TensorD grad_heads(enc.heads.shape());
  TensorD grad_feature;
  if (config.variant == Variant::dense_motion) {
    auto sg = bilinear_sample_vjp(enc.feature, al.composed, grad_aligned);
    grad_feature = std::move(sg.input);
    TensorD grad_mask({1, fh, fw});
    for (Index ax = 0; ax < 2; ++ax) {
      grad_mask.vec() += sg.coords.coords.vec().segment(ax * plane, plane).cwiseProduct(
          input.coarse_flow.coords.vec().segment(ax * plane, plane) -
          al.identity.coords.vec().segment(ax * plane, plane));
    }
    grad_heads.vec().segment((c + 1) * plane, plane) = sigmoid_vjp(enc.mask, grad_mask).vec();
  } else {
    grad_feature = std::move(grad_aligned);
  }
  grad_heads.vec().head(c * plane) = grad_feature.vec();
  grad_heads.vec().segment(c * plane, plane) = sigmoid_vjp(enc.confidence, grad_conf).vec();

  // Encoder.
  {
    auto cg = conv2d_vjp(enc.post[4], net.conv("head"), grad_heads);
    add_grads(g, "head", cg);
    grad = std::move(cg.input);
  }
  for (Index i = 4; i >= 0; --i) {
    const std::string name = "enc" + std::to_string(i);
    grad = leaky_relu_vjp(enc.pre[i], std::move(grad));
    const TensorD& in = i == 0 ? enc.input : enc.post[i - 1];
    auto cg = conv2d_vjp(in, net.conv(name), grad, kEncoderStrides[i], i > 0);
    add_grads(g, name, cg);
    if (i > 0) grad = std::move(cg.input);
  }
  return {lr.total, lr.l1, dec.output, std::move(g)};
}

}  // namespace

ForwardBackward forward_backward(const GeneratorInput& input, const TensorD& target,
                                 const ParameterSet& params, const PipelineConfig& config,
                                 const PerceptualBackend* backend) {
  return forward_backward(input, target, params, Network(params), config, backend);
}

TrainingSample make_sample(const SyntheticScene& scene, const PipelineConfig& config) {
  return {prepare_input(scene.source, scene.transform, scene.expression, config), scene.driving};
}

TrainState initial_state(const PipelineConfig& config) {
  TrainState s;
  s.params = init_parameters(config, config.seed);
  s.first_moment = s.params.zeros_like();
  s.second_moment = s.params.zeros_like();
  return s;
}

unsigned worker_threads() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("DISCO_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = unsigned(std::min(v, 64L));
  }
  return n;
}

namespace {

void require_finite_params(const ParameterSet& p, const std::string& context) {
  for (const auto& [name, t] : p.entries()) {
    if (!t.all_finite()) throw NumericError(context + ": tensor '" + name + "' is non-finite");
  }
}

}  // namespace

void train_steps(TrainState& state, const std::vector<TrainingSample>& dataset,
                 const PipelineConfig& config, Index steps, const PerceptualBackend* backend,
                 const StepCallback& on_step) {
  config.validate();
  if (dataset.empty()) throw DomainError("train: empty dataset");
  if (steps < 0) steps = config.steps;
  const Index batch = config.batch_size;
  const unsigned workers = std::min<unsigned>(worker_threads(), unsigned(batch));

  for (Index k = 0; k < steps; ++k) {
    // Batch indices depend only on (seed, step).
    Rng pick(config.seed * 0x9E3779B97F4A7C15ull + std::uint64_t(state.step) + 1);
    std::vector<Index> idx(static_cast<std::size_t>(batch));
    for (auto& i : idx) i = pick.index(Index(dataset.size()));

    const Network net(state.params);
    std::vector<std::optional<ForwardBackward>> results(idx.size());
    auto run = [&](std::size_t slot) {
      const TrainingSample& s = dataset[std::size_t(idx[slot])];
      results[slot] = forward_backward(s.input, s.target, state.params, net, config, backend);
    };
    if (workers <= 1) {
      for (std::size_t s = 0; s < idx.size(); ++s) run(s);
    } else {
      std::vector<std::thread> pool;
      for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (std::size_t s = w; s < idx.size(); s += workers) run(s);
        });
      }
      for (auto& t : pool) t.join();
    }

    // Reduce in batch order so the sum is independent of scheduling.
    double batch_loss = 0.0;
    ParameterSet grad = state.params.zeros_like();
    for (std::size_t s = 0; s < results.size(); ++s) {
      if (!std::isfinite(results[s]->loss)) {
        require_finite(results[s]->output, "generator output");
        require_finite_params(results[s]->gradients, "gradient");
        throw NumericError("train: non-finite loss at step " + std::to_string(state.step));
      }
      batch_loss += results[s]->loss;
      grad.accumulate(results[s]->gradients);
    }
    batch_loss /= double(batch);
    grad.scale(1.0 / double(batch));
    require_finite_params(grad, "gradient");

    ++state.step;
    const double t = double(state.step);
    const double bc1 = 1.0 - std::pow(config.beta1, t);
    const double bc2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t e = 0; e < grad.entries().size(); ++e) {
      auto& p = state.params.entries()[e].second.vec();
      auto& m = state.first_moment.entries()[e].second.vec();
      auto& v = state.second_moment.entries()[e].second.vec();
      const auto& gr = grad.entries()[e].second.vec();
      m = config.beta1 * m + (1.0 - config.beta1) * gr;
      v = config.beta2 * v + (1.0 - config.beta2) * gr.cwiseAbs2();
      if (config.learning_rate != 0.0) {
        p.array() -= config.learning_rate * (m.array() / bc1) /
                     ((v.array() / bc2).sqrt() + config.adam_eps);
      }
    }
    require_finite_params(state.params, "parameters after update");
    state.loss_history.push_back(batch_loss);
    if (on_step) on_step(state);
  }
}

TrainState train(const std::vector<TrainingSample>& dataset, const PipelineConfig& config,
                 const PerceptualBackend* backend, const StepCallback& on_step) {
  TrainState state = initial_state(config);
  train_steps(state, dataset, config, config.steps, backend, on_step);
  return state;
}

}  // namespace disco
