#pragma once

#include <vector>

#include "densebox/geometry.hpp"
#include "densebox/model.hpp"
#include "densebox/tensor.hpp"

namespace densebox {

struct PyramidConfig {
  double min_exp = -3.0;
  double max_exp = 1.2;
  double step = 0.3;
  double score_threshold = 0.5;
  double nms_iou = 0.5;  // 0.75 for the strict-overlap profile
  double reg_norm = 12.5;
  int max_side = 800;  // pre-downsample bound; 0 disables
  int threads = 0;

  void validate() const;
};

// {2^(min_exp + k*step)} while the exponent stays within max_exp (+epsilon).
std::vector<double> pyramid_scales(const PyramidConfig& cfg);

// Converts output maps produced at `scale` into detections in original-image
// coordinates. Pixels above score_threshold on the chosen channel
// (refine_score when use_refine and the branch exists, else score) yield
//   x = (x_i - d*reg_norm) * 4 / scale
// per corner; zero/negative-area boxes are dropped and counted.
std::vector<Detection> decode_map(const OutputMaps& out, double scale,
                                  const PyramidConfig& cfg, bool use_refine,
                                  int* degenerate_count = nullptr);

// Full multi-scale detection: optional max_side downsample, per-scale resize,
// pad-to-/8, forward, decode, then one global NMS over the pooled candidates.
// Scales run in parallel against frozen parameters; results are pooled in
// scale order.
std::vector<Detection> detect(const Tensor& image, const Model& m,
                              const PyramidConfig& cfg, bool use_refine);

}  // namespace densebox
