#include "densebox/pyramid.hpp"

#include <algorithm>
#include <cmath>

#include "densebox/errors.hpp"
#include "densebox/image.hpp"
#include "densebox/parallel.hpp"

namespace densebox {

void PyramidConfig::validate() const {
  if (min_exp > max_exp) throw DataError("pyramid.min_exp must be <= max_exp");
  if (step <= 0.0) throw DataError("pyramid.step must be > 0");
  if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw DataError("pyramid.nms_iou must be in (0,1]");
  if (reg_norm <= 0.0) throw DataError("pyramid.reg_norm must be > 0");
  if (max_side < 0) throw DataError("pyramid.max_side must be >= 0");
}

std::vector<double> pyramid_scales(const PyramidConfig& cfg) {
  cfg.validate();
  std::vector<double> scales;
  for (int k = 0;; ++k) {
    const double e = cfg.min_exp + k * cfg.step;
    if (e > cfg.max_exp + 1e-9) break;
    scales.push_back(std::pow(2.0, e));
  }
  return scales;
}

namespace {

constexpr int kStride = 4;

std::vector<Detection> decode_axes(const OutputMaps& out, double scale_x,
                                   double scale_y, double nominal_scale,
                                   const PyramidConfig& cfg, bool use_refine,
                                   int* degenerate_count) {
  const Tensor& chan =
      (use_refine && out.refine_score.defined()) ? out.refine_score : out.score;
  const int h = chan.dim(1), w = chan.dim(2);
  if (out.reg.dim(1) != h || out.reg.dim(2) != w) {
    throw ShapeError("decode_map: score/reg spatial mismatch");
  }
  const double* s = chan.data();
  const double* r = out.reg.data();
  const size_t plane = static_cast<size_t>(h) * w;
  const double fx = kStride / scale_x;
  const double fy = kStride / scale_y;
  int degenerate = 0;
  std::vector<Detection> dets;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      if (s[i] <= cfg.score_threshold) continue;
      BBox box{(x - r[i] * cfg.reg_norm) * fx,
               (y - r[plane + i] * cfg.reg_norm) * fy,
               (x - r[2 * plane + i] * cfg.reg_norm) * fx,
               (y - r[3 * plane + i] * cfg.reg_norm) * fy};
      if (box.xmin >= box.xmax || box.ymin >= box.ymax) {
        ++degenerate;
        continue;
      }
      dets.push_back(Detection{box, s[i], nominal_scale});
    }
  }
  if (degenerate_count) *degenerate_count += degenerate;
  return dets;
}

}  // namespace

std::vector<Detection> decode_map(const OutputMaps& out, double scale,
                                  const PyramidConfig& cfg, bool use_refine,
                                  int* degenerate_count) {
  return decode_axes(out, scale, scale, scale, cfg, use_refine, degenerate_count);
}

std::vector<Detection> detect(const Tensor& image, const Model& m,
                              const PyramidConfig& cfg, bool use_refine) {
  cfg.validate();
  if (!image.defined() || image.shape().size() != 3 || image.dim(1) <= 0 ||
      image.dim(2) <= 0) {
    throw DataError("detect: empty image");
  }
  const int orig_h = image.dim(1), orig_w = image.dim(2);

  // optional global downsample so the longest side stays within max_side
  Tensor work = image;
  double pre_x = 1.0, pre_y = 1.0;
  if (cfg.max_side > 0 && std::max(orig_h, orig_w) > cfg.max_side) {
    const double f = static_cast<double>(cfg.max_side) / std::max(orig_h, orig_w);
    const int wh = std::max(1, static_cast<int>(std::llround(orig_h * f)));
    const int ww = std::max(1, static_cast<int>(std::llround(orig_w * f)));
    work = resize_bilinear(image, wh, ww);
    pre_y = static_cast<double>(wh) / orig_h;
    pre_x = static_cast<double>(ww) / orig_w;
  }
  const int h = work.dim(1), w = work.dim(2);

  const std::vector<double> scales = pyramid_scales(cfg);
  std::vector<std::vector<Detection>> per_scale(scales.size());
  parallel_for(scales.size(), cfg.threads, [&](size_t si) {
    const double s = scales[si];
    const int th = std::max(8, static_cast<int>(std::llround(h * s)));
    const int tw = std::max(8, static_cast<int>(std::llround(w * s)));
    Tensor resized = resize_bilinear(work, th, tw);
    // exact factors actually applied, per axis
    const double sy = static_cast<double>(th) / h;
    const double sx = static_cast<double>(tw) / w;
    Tensor padded = pad_to_multiple(resized, 8);
    OutputMaps maps = forward(m, padded, nullptr);
    per_scale[si] =
        decode_axes(maps, sx * pre_x, sy * pre_y, s, cfg, use_refine, nullptr);
  });

  std::vector<Detection> pooled;
  for (auto& v : per_scale) {
    pooled.insert(pooled.end(), v.begin(), v.end());
  }
  // clip to the original image and drop anything that degenerates
  std::vector<Detection> clipped;
  clipped.reserve(pooled.size());
  for (Detection d : pooled) {
    d.box.xmin = std::clamp(d.box.xmin, 0.0, orig_w - 1.0);
    d.box.xmax = std::clamp(d.box.xmax, 0.0, orig_w - 1.0);
    d.box.ymin = std::clamp(d.box.ymin, 0.0, orig_h - 1.0);
    d.box.ymax = std::clamp(d.box.ymax, 0.0, orig_h - 1.0);
    if (d.box.xmin < d.box.xmax && d.box.ymin < d.box.ymax) clipped.push_back(d);
  }
  return nms(clipped, cfg.nms_iou);
}

}  // namespace densebox
