#include "densebox/geometry.hpp"

#include <algorithm>
#include <numeric>

#include "densebox/errors.hpp"

namespace densebox {

double iou(const BBox& a, const BBox& b) {
  const double ix = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
  const double iy = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  if (iou_threshold <= 0.0 || iou_threshold > 1.0) {
    throw DataError("nms iou_threshold must be in (0,1]");
  }
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return dets[a].score > dets[b].score;
  });
  std::vector<char> suppressed(dets.size(), 0);
  std::vector<Detection> kept;
  for (size_t i = 0; i < order.size(); ++i) {
    if (suppressed[order[i]]) continue;
    const Detection& top = dets[order[i]];
    kept.push_back(top);
    for (size_t j = i + 1; j < order.size(); ++j) {
      if (suppressed[order[j]]) continue;
      if (iou(top.box, dets[order[j]].box) > iou_threshold) suppressed[order[j]] = 1;
    }
  }
  return kept;
}

}  // namespace densebox
