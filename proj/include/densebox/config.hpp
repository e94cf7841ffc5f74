#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "densebox/groundtruth.hpp"
#include "densebox/model.hpp"
#include "densebox/pyramid.hpp"
#include "densebox/sampling.hpp"
#include "densebox/synth.hpp"

#include <nlohmann/json_fwd.hpp>

namespace densebox {

struct OptimRunConfig {
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int batch_size = 10;
  long iterations = 1000;
  long lr_decay_every = 0;  // 0 = constant learning rate
  double lr_decay_factor = 0.1;
};

// Aggregate configuration for every CLI command. One JSON document; any field
// can be overridden on the command line with --section.key=value.
struct RunConfig {
  uint64_t seed = 1;
  int threads = 0;  // 0 = all hardware threads
  GeometryConfig geometry;
  ModelConfig model;
  MiningConfig mining;
  LossWeights loss;
  bool refine_uses_det_mask = true;
  OptimRunConfig optimizer;
  PyramidConfig pyramid;
  SceneConfig synth;
  int scene_count = 500;
  double split_train = 0.8;
  double split_val = 0.1;
  double jitter_translation_frac = 25.0 / 240.0;
  double random_zoom_low = 0.5;
  double random_zoom_high = 2.0;
  double eval_iou = 0.5;
  bool use_refine = false;

  SamplerConfig sampler() const;
  void validate() const;  // cross-field consistency, throws DataError
};

RunConfig default_run_config();
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::ordered_json run_config_to_json(const RunConfig& cfg);
void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);

// Applies a dotted-path override, e.g. "optimizer.iterations", "42".
// Values parse as JSON scalars when possible, else as strings.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

nlohmann::ordered_json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace densebox
