#pragma once

#include <vector>

namespace densebox {

// Continuous-coordinate box, corners (xmin,ymin) top-left and (xmax,ymax)
// bottom-right. Area is (xmax-xmin)*(ymax-ymin); no +1 pixel convention.
struct BBox {
  double xmin = 0, ymin = 0, xmax = 0, ymax = 0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (xmin + xmax); }
  double cy() const { return 0.5 * (ymin + ymax); }
};

struct Detection {
  BBox box;
  double score = 0.0;
  double scale = 1.0;  // pyramid scale the box was decoded at
};

// Intersection over union in [0,1]; 0 when the union is degenerate.
double iou(const BBox& a, const BBox& b);

// Greedy NMS: repeatedly keep the highest-score remaining detection and drop
// everything with iou strictly above the threshold against it. Score ties go
// to the earlier input index. Output is sorted by descending score.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold);

}  // namespace densebox
