#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "densebox/groundtruth.hpp"
#include "densebox/sampling.hpp"
#include "densebox/tensor.hpp"

namespace densebox {

struct ModelConfig {
  std::array<int, 3> stage_channels{16, 32, 64};
  int head_hidden = 48;
  int n_landmarks = 0;  // 0 disables the landmark and refine branches
  int refine_hidden = 8;
  int input_channels = 3;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct OutputMaps {
  Tensor score;         // 1 x H/4 x W/4
  Tensor reg;           // 4 x H/4 x W/4
  Tensor landmarks;     // N x H/4 x W/4 (undefined when N == 0)
  Tensor refine_score;  // 1 x H/4 x W/4 (undefined when N == 0)
};

struct ConvLayer {
  Param w;
  Param b;
};

// Output-stride-4 dense detector: two pooled 3x3 stages to /4 (fine features,
// receptive field near the object size), a third pooled stage to /8 (context)
// that is bilinearly upsampled and concatenated back, then pairs of 1x1
// layers per output head. The landmark head mirrors the score head; the
// refine head fuses score and landmark maps through small 3x3 convolutions.
struct Model {
  ModelConfig cfg;
  ConvLayer s1a, s1b;  // input -> c1, /1
  ConvLayer s2a, s2b;  // c1 -> c2, /2
  ConvLayer s3a, s3b;  // c2 -> c3, /8 path
  ConvLayer score1, score2;
  ConvLayer reg1, reg2;
  ConvLayer lm1, lm2;
  ConvLayer rf1, rf2, rf3;

  bool has_landmarks() const { return cfg.n_landmarks > 0; }
  std::vector<Param*> parameters();
  std::vector<const Param*> parameters() const;
  Model clone_values() const;  // deep copy of parameter tensors
};

Model build_model(const ModelConfig& cfg, uint64_t seed);

// Image must be input_channels x H x W with H, W divisible by 8.
OutputMaps forward(const Model& m, const Tensor& image, Tape* tape);

struct OptimConfig {
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0005;
};

struct TrainItem {
  Tensor patch;
  GroundTruthMap gt;
};

struct TrainStats {
  long iter = 0;
  double det = 0, lm = 0, rf = 0, full = 0;
  long n_pos = 0, n_hard = 0, n_rand = 0;
  std::string log_line() const;
};

struct TrainStepConfig {
  LossWeights loss;
  MiningConfig mining;
  OptimConfig optim;
  double r_near = 2.0;              // gray zone for landmark channel mining
  bool refine_uses_det_mask = true;
  int threads = 0;
  uint64_t seed = 0;
};

// Frozen per-patch masks plus the loss graph, shared between training and the
// finite-difference checks (selection itself is not differentiated through).
struct PatchMasks {
  SampleMask det;
  std::vector<SampleMask> lm;
  SampleMask refine;  // used only when refine_uses_det_mask is false
  bool separate_refine = false;
};

PatchMasks mine_patch(const OutputMaps& maps, const GroundTruthMap& gt,
                      const MiningConfig& mining, double r_near,
                      bool refine_uses_det_mask);

struct PatchLoss {
  Tensor full;  // scalar on tape
  double det = 0, lm = 0, rf = 0;
  int n_pos = 0, n_hard = 0, n_rand = 0;
};

PatchLoss patch_loss(const OutputMaps& maps, const GroundTruthMap& gt,
                     const PatchMasks& masks, const LossWeights& w, Tape* tape);

// Forward + loss + backward over the batch (items processed in parallel on
// cloned parameter sets, gradients reduced in batch order), then one SGD step.
TrainStats train_step(Model& m, const std::vector<TrainItem>& batch,
                      const TrainStepConfig& cfg, long iter);

}  // namespace densebox
