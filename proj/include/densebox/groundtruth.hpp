#pragma once

#include <array>
#include <optional>
#include <vector>

#include "densebox/geometry.hpp"
#include "densebox/tensor.hpp"

namespace densebox {

struct Point {
  double x = 0, y = 0;
};

struct GeometryConfig {
  int patch_size = 240;
  double target_height = 50.0;
  int down_factor = 4;  // fixed by the output stride of the net
  double r_c_factor = 0.3;
  double scale_low = 0.8;
  double scale_high = 1.25;
  double r_near = 2.0;
  double r_l = 1.0;
  int n_landmarks = 0;
  double reg_norm = 12.5;  // target_height / down_factor

  int out_size() const { return patch_size / down_factor; }
  void validate() const;  // throws DataError
};

// One annotated object in patch (or scene) pixel coordinates. The landmark
// list is either empty or holds exactly n_landmarks entries; nulls mark
// unannotated points.
struct AnnotatedObject {
  BBox box;
  std::vector<std::optional<Point>> landmarks;
};

// Dense training targets at 1/down_factor resolution.
struct GroundTruthMap {
  Tensor score;      // 1 x h x w, {0,1}
  Tensor reg;        // 4 x h x w, normalized corner offsets
  Tensor landmarks;  // N x h x w, {0,1} (N == cfg.n_landmarks, may be 0)
  Tensor ignore;     // 1 x h x w, {0,1}; gray zone around positives
  int skipped_boxes = 0;  // annotations entirely outside the patch
};

GroundTruthMap encode_patch(const std::vector<AnnotatedObject>& objects,
                            const GeometryConfig& cfg);

// ignore=1 at score=0 pixels with a positive pixel within Euclidean distance
// r_near; 0 elsewhere (and at all positive pixels).
Tensor compute_ignore_flags(const Tensor& score_map, double r_near);

// (x - xmin, y - ymin, x - xmax, y - ymax) / reg_norm, all in output coords.
std::array<double, 4> regression_target(double x, double y, const BBox& box_out,
                                        const GeometryConfig& cfg);

// Inverse of regression_target given an output-pixel location.
BBox decode_regression(double x, double y, const std::array<double, 4>& target,
                       double reg_norm);

}  // namespace densebox
