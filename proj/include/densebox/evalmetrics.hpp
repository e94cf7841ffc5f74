#pragma once

#include <filesystem>
#include <vector>

#include "densebox/geometry.hpp"

namespace densebox {

// Greedy matching of one image's detections against its ground truth:
// detections visit in descending score order (ties by input order) and claim
// the unmatched ground-truth box of highest IoU >= threshold.
struct MatchResult {
  // parallel arrays, in score-descending detection order
  std::vector<double> scores;
  std::vector<uint8_t> is_tp;
  std::vector<uint8_t> gt_matched;  // per ground-truth box
};

MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<BBox>& gts, double iou_threshold);

struct PrPoint {
  double recall = 0;
  double precision = 0;
};

struct EvalReport {
  double iou_threshold = 0.5;
  double ap = 0.0;
  long n_gt = 0;
  long n_det = 0;
  std::vector<PrPoint> pr_curve;
};

// Pools matches across images (image order, then per-image score order),
// sorts by score, and integrates the all-points precision envelope.
// Throws DataError when there is no ground truth at all.
EvalReport average_precision(const std::vector<MatchResult>& per_image,
                             double iou_threshold);

// Simple PR-curve rendering for quick inspection.
void render_pr_curve(const std::filesystem::path& path, const EvalReport& report);

}  // namespace densebox
