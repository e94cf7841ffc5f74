#include "densebox/groundtruth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "densebox/errors.hpp"

namespace densebox {

void GeometryConfig::validate() const {
  if (down_factor != 4) throw DataError("geometry.down_factor is fixed at 4");
  if (patch_size <= 0 || patch_size % down_factor != 0) {
    throw DataError("geometry.patch_size must be a positive multiple of 4");
  }
  if (patch_size % 8 != 0) {
    throw DataError("geometry.patch_size must be divisible by 8 for the backbone");
  }
  if (!(scale_low < 1.0 && 1.0 < scale_high)) {
    throw DataError("geometry.scale_range must straddle 1.0");
  }
  if (r_c_factor <= 0.0) throw DataError("geometry.r_c_factor must be > 0");
  if (target_height <= 0.0) throw DataError("geometry.target_height must be > 0");
  if (n_landmarks < 0) throw DataError("geometry.n_landmarks must be >= 0");
  const double expected = target_height / down_factor;
  if (std::abs(reg_norm - expected) > 1e-12) {
    throw DataError("geometry.reg_norm must equal target_height/down_factor");
  }
}

std::array<double, 4> regression_target(double x, double y, const BBox& box_out,
                                        const GeometryConfig& cfg) {
  const double inv = 1.0 / cfg.reg_norm;
  return {(x - box_out.xmin) * inv, (y - box_out.ymin) * inv,
          (x - box_out.xmax) * inv, (y - box_out.ymax) * inv};
}

BBox decode_regression(double x, double y, const std::array<double, 4>& target,
                       double reg_norm) {
  return BBox{x - target[0] * reg_norm, y - target[1] * reg_norm,
              x - target[2] * reg_norm, y - target[3] * reg_norm};
}

Tensor compute_ignore_flags(const Tensor& score_map, double r_near) {
  const int h = score_map.dim(1), w = score_map.dim(2);
  Tensor ignore = Tensor::zeros({1, h, w});
  const double* s = score_map.data();
  double* ig = ignore.data();
  const int radius = static_cast<int>(std::floor(r_near));
  const double r2 = r_near * r_near;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (s[static_cast<size_t>(y) * w + x] != 1.0) continue;
      for (int dy = -radius; dy <= radius; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int dx = -radius; dx <= radius; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          if (static_cast<double>(dy) * dy + static_cast<double>(dx) * dx > r2) continue;
          ig[static_cast<size_t>(yy) * w + xx] = 1.0;
        }
      }
    }
  }
  // keep the flag off positives themselves
  for (int64_t i = 0; i < ignore.size(); ++i) {
    if (s[i] == 1.0) ig[i] = 0.0;
  }
  return ignore;
}

GroundTruthMap encode_patch(const std::vector<AnnotatedObject>& objects,
                            const GeometryConfig& cfg) {
  const int out = cfg.out_size();
  const double inv_down = 1.0 / cfg.down_factor;
  GroundTruthMap gt;
  gt.score = Tensor::zeros({1, out, out});
  gt.reg = Tensor::zeros({4, out, out});
  gt.landmarks = Tensor::zeros({cfg.n_landmarks, out, out});
  gt.ignore = Tensor::zeros({1, out, out});

  const double lo = cfg.scale_low * cfg.target_height * inv_down;
  const double hi = cfg.scale_high * cfg.target_height * inv_down;
  const double patch_max = cfg.patch_size - 1.0;

  struct InRangeBox {
    BBox box_out;
    const AnnotatedObject* obj;
  };
  std::vector<InRangeBox> in_range;
  for (const AnnotatedObject& obj : objects) {
    BBox b = obj.box;
    if (b.xmax < 0.0 || b.xmin > patch_max || b.ymax < 0.0 || b.ymin > patch_max ||
        b.width() <= 0.0 || b.height() <= 0.0) {
      ++gt.skipped_boxes;
      continue;
    }
    b.xmin = std::clamp(b.xmin, 0.0, patch_max);
    b.xmax = std::clamp(b.xmax, 0.0, patch_max);
    b.ymin = std::clamp(b.ymin, 0.0, patch_max);
    b.ymax = std::clamp(b.ymax, 0.0, patch_max);
    if (b.width() <= 0.0 || b.height() <= 0.0) {
      ++gt.skipped_boxes;
      continue;
    }
    const BBox box_out{b.xmin * inv_down, b.ymin * inv_down, b.xmax * inv_down,
                       b.ymax * inv_down};
    const double h_out = box_out.height();
    if (h_out < lo || h_out > hi) continue;  // out of scale range: stays negative
    in_range.push_back({box_out, &obj});
  }

  double* score = gt.score.data();

  // positive circles, clamped to the box extent
  for (const InRangeBox& ib : in_range) {
    const double cx = ib.box_out.cx(), cy = ib.box_out.cy();
    const double r = cfg.r_c_factor * ib.box_out.height();
    const double r2 = r * r;
    const int y0 = std::max(0, static_cast<int>(std::ceil(cy - r)));
    const int y1 = std::min(out - 1, static_cast<int>(std::floor(cy + r)));
    for (int y = y0; y <= y1; ++y) {
      if (y < ib.box_out.ymin || y > ib.box_out.ymax) continue;
      const int x0 = std::max(0, static_cast<int>(std::ceil(cx - r)));
      const int x1 = std::min(out - 1, static_cast<int>(std::floor(cx + r)));
      for (int x = x0; x <= x1; ++x) {
        if (x < ib.box_out.xmin || x > ib.box_out.xmax) continue;
        const double dx = x - cx, dy = y - cy;
        if (dx * dx + dy * dy <= r2) score[static_cast<size_t>(y) * out + x] = 1.0;
      }
    }
  }

  // regression channels: nearest in-range box by center distance, everywhere
  if (!in_range.empty()) {
    double* reg = gt.reg.data();
    const size_t plane = static_cast<size_t>(out) * out;
    for (int y = 0; y < out; ++y) {
      for (int x = 0; x < out; ++x) {
        size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (size_t i = 0; i < in_range.size(); ++i) {
          const double dx = x - in_range[i].box_out.cx();
          const double dy = y - in_range[i].box_out.cy();
          const double d = dx * dx + dy * dy;
          if (d < best_d) {
            best_d = d;
            best = i;
          }
        }
        const auto t = regression_target(x, y, in_range[best].box_out, cfg);
        const size_t px = static_cast<size_t>(y) * out + x;
        for (int c = 0; c < 4; ++c) reg[c * plane + px] = t[c];
      }
    }
  }

  // landmark heatmaps for in-range objects
  if (cfg.n_landmarks > 0) {
    double* lm = gt.landmarks.data();
    const size_t plane = static_cast<size_t>(out) * out;
    const double rl2 = cfg.r_l * cfg.r_l;
    for (const InRangeBox& ib : in_range) {
      const auto& lms = ib.obj->landmarks;
      if (lms.empty()) continue;
      if (static_cast<int>(lms.size()) != cfg.n_landmarks) {
        throw DataError("object has " + std::to_string(lms.size()) +
                        " landmarks, expected " + std::to_string(cfg.n_landmarks));
      }
      for (int k = 0; k < cfg.n_landmarks; ++k) {
        if (!lms[k]) continue;
        const double cx = lms[k]->x * inv_down, cy = lms[k]->y * inv_down;
        const int y0 = std::max(0, static_cast<int>(std::ceil(cy - cfg.r_l)));
        const int y1 = std::min(out - 1, static_cast<int>(std::floor(cy + cfg.r_l)));
        for (int y = y0; y <= y1; ++y) {
          const int x0 = std::max(0, static_cast<int>(std::ceil(cx - cfg.r_l)));
          const int x1 = std::min(out - 1, static_cast<int>(std::floor(cx + cfg.r_l)));
          for (int x = x0; x <= x1; ++x) {
            const double dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy <= rl2) lm[k * plane + static_cast<size_t>(y) * out + x] = 1.0;
          }
        }
      }
    }
  }

  gt.ignore = compute_ignore_flags(gt.score, cfg.r_near);
  return gt;
}

}  // namespace densebox
