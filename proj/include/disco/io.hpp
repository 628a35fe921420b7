#ifndef DISCO_IO_HPP
#define DISCO_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "disco/flow.hpp"
#include "disco/geometry.hpp"
#include "disco/pipeline.hpp"
#include "disco/synthbench.hpp"
#include "disco/tensor.hpp"

namespace disco {

// Whole-file helpers. Failures to open or write raise DomainError.
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

/// [0,1] -> 0..255 with round-half-to-even; values outside [0,1] are clamped.
std::uint8_t quantize_unit(double v);

// Binary PNM. P6 decodes to [3,H,W], P5 to [1,H,W], values in [0,1].
TensorD decode_pnm(const std::string& bytes);
std::string encode_pnm(const TensorD& image);  // [3,H,W] -> P6, [1,H,W] or [H,W] -> P5
TensorD read_pnm(const std::string& path);
void write_pnm(const std::string& path, const TensorD& image);

// "DFLW" flow container.
std::string encode_flow(const FlowFieldD& flow);
FlowFieldD decode_flow(const std::string& bytes);

// "DCHK" parameter checkpoint container.
std::string encode_checkpoint(const ParameterSet& params);
ParameterSet decode_checkpoint(const std::string& bytes);

// JSON documents. Numbers are written with 17 significant digits.
std::string format_number(double v);
std::string transform_to_json(const Transform& t);
Transform transform_from_json(const std::string& text);
std::string keypoints_to_json(const PointMatrix<double>& points);
PointMatrix<double> keypoints_from_json(const std::string& text);
std::string config_to_json(const PipelineConfig& config);
PipelineConfig config_from_json(const std::string& text);
SceneSpec scene_spec_from_json(const std::string& text);

/// "step,loss" CSV, one row per recorded step starting at 1.
std::string loss_csv(const std::vector<double>& history);

}  // namespace disco

#endif  // DISCO_IO_HPP
