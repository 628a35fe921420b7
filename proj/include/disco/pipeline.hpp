#ifndef DISCO_PIPELINE_HPP
#define DISCO_PIPELINE_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "disco/flow.hpp"
#include "disco/geometry.hpp"
#include "disco/modconv.hpp"
#include "disco/tensor.hpp"

namespace disco {

struct SyntheticScene;

enum class Variant { dense_motion, neural_mix };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& name);

struct PipelineConfig {
  Variant variant = Variant::dense_motion;
  TransformKind transform = TransformKind::affine;
  Index image_size = 64;
  std::vector<Index> encoder_widths{32, 64, 128};
  Index feature_channels = 128;
  Index residual_blocks = 6;
  std::vector<Index> decoder_widths{64, 32, 32};
  Index output_kernel = 7;
  Index expression_dim = 16;
  double demod_eps = kDefaultDemodEps;
  double cov_eps = kDefaultCovarianceFloor;
  double tps_reg = 0.0;
  double perceptual_weight = 0.0;  // λ
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Index batch_size = 4;
  Index steps = 2000;
  std::uint64_t seed = 42;

  void validate() const;
  Index feature_size() const { return image_size / 8; }
};

/// Named learnable tensors in a fixed order (the checkpoint order).
class ParameterSet {
 public:
  void add(std::string name, TensorD value);
  TensorD& at(const std::string& name);
  const TensorD& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  std::vector<std::pair<std::string, TensorD>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, TensorD>>& entries() const { return entries_; }
  Index scalar_count() const;

  ParameterSet zeros_like() const;
  /// this += other (same layout required).
  void accumulate(const ParameterSet& other);
  void scale(double factor);

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::vector<std::pair<std::string, TensorD>> entries_;
  std::map<std::string, std::size_t> index_;
};

ParameterSet init_parameters(const PipelineConfig& config, std::uint64_t seed);

/// (F, C, M) of the motion-aware encoder; M only for dense motion.
struct EncoderOutput {
  TensorD feature;
  ConfidenceMap<double> confidence;
  std::optional<MotionMask<double>> mask;
};

/// Source and driving-pose inputs to the generator.
struct GeneratorInput {
  TensorD source;              // [3,H,W]
  TensorD transformed_source;  // source warped by the relative transform
  FlowFieldD coarse_flow;      // O_T at feature resolution
  ExpressionFeature<double> expression;
};

GeneratorInput prepare_input(const TensorD& source, const Transform& transform,
                             const ExpressionFeature<double>& expression,
                             const PipelineConfig& config);

EncoderOutput encode(const TensorD& source, const TensorD& transformed_source,
                     const ParameterSet& params, const PipelineConfig& config);

/// Dense motion: warp F by O_P = (1-M) O_I + M O_T. Neural mix: F unchanged.
TensorD align(const EncoderOutput& enc, const FlowFieldD& coarse_flow, Variant variant);

TensorD decode(const TensorD& encoded, const ExpressionFeature<double>& expression,
               const ParameterSet& params, const PipelineConfig& config);

TensorD generate(const TensorD& source, const Transform& transform,
                 const ExpressionFeature<double>& expression, const ParameterSet& params,
                 const PipelineConfig& config);

TensorD generate(const GeneratorInput& input, const ParameterSet& params,
                 const PipelineConfig& config);

/// Optional perceptual term of the training loss.
class PerceptualBackend {
 public:
  virtual ~PerceptualBackend() = default;
  /// Returns the loss and writes d(loss)/d(predicted) into `grad`.
  virtual double evaluate(const TensorD& predicted, const TensorD& target, TensorD& grad) const = 0;
};

struct LossResult {
  double total;
  double l1;
  double perceptual;
  TensorD gradient;  // d total / d predicted
};

/// L_total = mean |predicted - target| + λ L_perceptual.
LossResult loss(const TensorD& predicted, const TensorD& target, double lambda,
                const PerceptualBackend* backend = nullptr);

struct ForwardBackward {
  double loss;
  double l1;
  TensorD output;
  ParameterSet gradients;
};

/// One sample through the generator, the loss, and back to every parameter.
ForwardBackward forward_backward(const GeneratorInput& input, const TensorD& target,
                                 const ParameterSet& params, const PipelineConfig& config,
                                 const PerceptualBackend* backend = nullptr);

struct TrainingSample {
  GeneratorInput input;
  TensorD target;
};

TrainingSample make_sample(const SyntheticScene& scene, const PipelineConfig& config);

struct TrainState {
  ParameterSet params;
  ParameterSet first_moment;
  ParameterSet second_moment;
  Index step = 0;
  std::vector<double> loss_history;
};

TrainState initial_state(const PipelineConfig& config);

using StepCallback = std::function<void(const TrainState&)>;

/// Runs `steps` Adam updates (config.steps when negative) from `state`.
void train_steps(TrainState& state, const std::vector<TrainingSample>& dataset,
                 const PipelineConfig& config, Index steps = -1,
                 const PerceptualBackend* backend = nullptr, const StepCallback& on_step = {});

TrainState train(const std::vector<TrainingSample>& dataset, const PipelineConfig& config,
                 const PerceptualBackend* backend = nullptr, const StepCallback& on_step = {});

/// Worker count: DISCO_THREADS (1..64) when set, else the hardware count.
unsigned worker_threads();

}  // namespace disco

#endif  // DISCO_PIPELINE_HPP
