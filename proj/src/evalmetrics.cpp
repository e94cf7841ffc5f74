#include "densebox/evalmetrics.hpp"

#include <algorithm>
#include <numeric>

#include "densebox/errors.hpp"
#include "densebox/image.hpp"

namespace densebox {

MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<BBox>& gts, double iou_threshold) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dets[a].score > dets[b].score; });

  MatchResult res;
  res.gt_matched.assign(gts.size(), 0);
  res.scores.reserve(dets.size());
  res.is_tp.reserve(dets.size());
  for (int idx : order) {
    const Detection& d = dets[idx];
    double best_iou = 0.0;
    int best_gt = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (res.gt_matched[g]) continue;
      const double v = iou(d.box, gts[g]);
      if (v > best_iou) {
        best_iou = v;
        best_gt = static_cast<int>(g);
      }
    }
    const bool tp = best_gt >= 0 && best_iou >= iou_threshold;
    if (tp) res.gt_matched[static_cast<size_t>(best_gt)] = 1;
    res.scores.push_back(d.score);
    res.is_tp.push_back(tp ? 1 : 0);
  }
  return res;
}

EvalReport average_precision(const std::vector<MatchResult>& per_image,
                             double iou_threshold) {
  EvalReport report;
  report.iou_threshold = iou_threshold;

  std::vector<std::pair<double, uint8_t>> pooled;  // (score, tp)
  for (const MatchResult& m : per_image) {
    report.n_gt += static_cast<long>(m.gt_matched.size());
    for (size_t i = 0; i < m.scores.size(); ++i) {
      pooled.emplace_back(m.scores[i], m.is_tp[i]);
    }
  }
  if (report.n_gt == 0) throw DataError("average_precision: no ground truth boxes");
  report.n_det = static_cast<long>(pooled.size());
  // ties keep pooled (input) order
  std::stable_sort(pooled.begin(), pooled.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  std::vector<double> recall(pooled.size()), precision(pooled.size());
  long tp = 0;
  for (size_t i = 0; i < pooled.size(); ++i) {
    tp += pooled[i].second;
    recall[i] = static_cast<double>(tp) / static_cast<double>(report.n_gt);
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  report.pr_curve.resize(pooled.size());
  for (size_t i = 0; i < pooled.size(); ++i) {
    report.pr_curve[i] = PrPoint{recall[i], precision[i]};
  }

  // all-points interpolation: running max of precision from the right,
  // integrated over recall increments
  double envelope = 0.0, ap = 0.0;
  for (size_t i = pooled.size(); i-- > 0;) {
    envelope = std::max(envelope, precision[i]);
    const double prev_recall = i > 0 ? recall[i - 1] : 0.0;
    ap += envelope * (recall[i] - prev_recall);
  }
  report.ap = ap;
  return report;
}

void render_pr_curve(const std::filesystem::path& path, const EvalReport& report) {
  const int w = 420, h = 320, margin = 30;
  Image8 img;
  img.width = w;
  img.height = h;
  img.rgb.assign(static_cast<size_t>(w) * h * 3, 255);
  auto put = [&](int x, int y, uint8_t r, uint8_t g, uint8_t b) {
    if (x < 0 || x >= w || y < 0 || y >= h) return;
    uint8_t* p = img.pixel(x, y);
    p[0] = r;
    p[1] = g;
    p[2] = b;
  };
  for (int x = margin; x < w - 10; ++x) put(x, h - margin, 120, 120, 120);
  for (int y = 10; y <= h - margin; ++y) put(margin, y, 120, 120, 120);
  auto px = [&](double recall) {
    return margin + static_cast<int>(recall * (w - margin - 15));
  };
  auto py = [&](double precision) {
    return h - margin - static_cast<int>(precision * (h - margin - 15));
  };
  int last_x = px(0.0), last_y = py(1.0);
  for (const PrPoint& p : report.pr_curve) {
    const int x = px(p.recall), y = py(p.precision);
    const int steps = std::max(std::abs(x - last_x), std::abs(y - last_y)) + 1;
    for (int s = 0; s <= steps; ++s) {
      const double t = static_cast<double>(s) / steps;
      put(static_cast<int>(last_x + t * (x - last_x)),
          static_cast<int>(last_y + t * (y - last_y)), 200, 30, 30);
    }
    last_x = x;
    last_y = y;
  }
  write_ppm(path, img);
}

}  // namespace densebox
