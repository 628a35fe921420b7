#ifndef DISCO_GRADCHECK_HPP
#define DISCO_GRADCHECK_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "disco/tensor.hpp"

namespace disco {

inline constexpr double kFiniteDifferenceStep = 1e-4;
inline constexpr double kVjpTolerance = 1e-5;
inline constexpr double kLossTolerance = 1e-6;
inline constexpr double kPipelineTolerance = 1e-4;

/// Central-difference gradient of `objective` with respect to every entry of
/// `t`, perturbing in place and restoring each entry afterwards.
Eigen::VectorXd numeric_gradient(TensorD& t, const std::function<double()>& objective,
                                 double step = kFiniteDifferenceStep);

/// ||a - n||_inf / max(||a||_inf, ||n||_inf); 0 when both vanish.
double relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric);

struct GradCheckOptions {
  std::uint64_t seed = 42;
  Index size = 4;        // spatial extent of the random instances
  Index instances = 50;  // per operation
  double step = kFiniteDifferenceStep;
  bool include_pipeline = true;
  /// Test hook: name of an operation whose analytic gradient is corrupted
  /// before comparison, so the suite must report it.
  std::string perturb;
};

struct OperationReport {
  std::string name;
  Index instances = 0;
  double worst_relative_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return worst_relative_error < tolerance; }
};

struct GradCheckReport {
  std::vector<OperationReport> operations;
  bool passed() const;
};

/// Operations covered: bilinear_sample, conv2d, modconv, expression_scales,
/// loss and (optionally) the full generator on a 32×32 scene.
GradCheckReport run_grad_check(const GradCheckOptions& options);

/// One "RESULT op=..." line per operation plus a final status line.
std::string format_grad_check(const GradCheckReport& report);

/// Generator loss gradient against finite differences on `count` randomly
/// chosen parameter entries; returns the worst relative error.
double pipeline_gradient_error(std::uint64_t seed, bool dense_motion, Index count = 16,
                               double step = kFiniteDifferenceStep);

}  // namespace disco

#endif  // DISCO_GRADCHECK_HPP
