#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "densebox/config.hpp"
#include "densebox/evalmetrics.hpp"
#include "densebox/model.hpp"

namespace densebox {

struct ManifestEntry {
  std::string image;       // path relative to the manifest directory
  std::string annotation;  // idem
  std::string split;       // train | val | test
};

struct Dataset {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
};

Dataset load_manifest(const std::filesystem::path& manifest_path);
std::vector<AnnotatedObject> load_annotation(const std::filesystem::path& path);
void save_annotation(const std::filesystem::path& path,
                     const std::vector<AnnotatedObject>& objects);

// Model checkpointing: binary parameter file plus a JSON header
// (<path>.json) echoing the model configuration and training iteration.
void save_model_checkpoint(const std::filesystem::path& path, const Model& m,
                           long iteration);
Model load_model_checkpoint(const std::filesystem::path& path);

// Raises DataError naming the first diverging field when the checkpoint
// header disagrees with the run configuration.
void check_model_config(const ModelConfig& expected, const ModelConfig& actual);

// Per-image detections, as written to / read from the detections JSON file.
struct ImageDetections {
  std::string image;
  std::vector<Detection> detections;
};
void save_detections(const std::filesystem::path& path,
                     const std::vector<ImageDetections>& dets);
std::vector<ImageDetections> load_detections(const std::filesystem::path& path);

void save_eval_report(const std::filesystem::path& path, const EvalReport& report);

// ---- commands ---------------------------------------------------------------

struct SynthResult {
  std::filesystem::path manifest;
  int scenes = 0;
  long objects = 0;
};
SynthResult cmd_synth(const RunConfig& cfg, const std::filesystem::path& out_dir);

struct TrainResult {
  std::filesystem::path checkpoint;
  std::vector<TrainStats> log;
};
TrainResult cmd_train(const RunConfig& cfg, const std::filesystem::path& manifest,
                      const std::filesystem::path& out_checkpoint);

struct DetectResult {
  std::filesystem::path output;
  long images = 0;
  long detections = 0;
};
// `inputs` is either a single dataset manifest (entries of `split` are used)
// or a list of PPM paths.
DetectResult cmd_detect(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                        const std::vector<std::string>& inputs, const std::string& split,
                        const std::filesystem::path& out_json,
                        const std::filesystem::path& overlay_dir = {});

EvalReport cmd_eval(const std::filesystem::path& detections_json,
                    const std::filesystem::path& manifest, const std::string& split,
                    double iou_threshold, const std::filesystem::path& out_report,
                    const std::filesystem::path& pr_curve_ppm = {});

}  // namespace densebox
