#include "densebox/synth.hpp"

#include <algorithm>
#include <cmath>

#include "densebox/errors.hpp"

namespace densebox {

void SceneConfig::validate() const {
  if (width <= 0 || height <= 0) throw DataError("synth: scene size must be positive");
  if (min_objects < 0 || max_objects < min_objects) {
    throw DataError("synth: bad object count range");
  }
  if (min_height <= 0 || max_height < min_height) {
    throw DataError("synth: bad object height range");
  }
  if (max_height > std::min(width, height) - 6) {
    throw DataError("synth: max_height does not fit in the scene");
  }
  if (landmark_fraction < 0.0 || landmark_fraction > 1.0) {
    throw DataError("synth: landmark_fraction must be in [0,1]");
  }
  if (n_landmarks < 0 || n_landmarks > 32) {
    throw DataError("synth: n_landmarks must be in [0,32]");
  }
}

namespace {

struct Canvas {
  int w, h;
  std::vector<double> px;  // 3 planes

  Canvas(int width, int height) : w(width), h(height), px(3ull * width * height, 0.0) {}
  double* plane(int c) { return px.data() + static_cast<size_t>(c) * w * h; }

  void blend(int x, int y, double r, double g, double b, double alpha) {
    if (x < 0 || x >= w || y < 0 || y >= h) return;
    const size_t i = static_cast<size_t>(y) * w + x;
    double* pr = plane(0);
    double* pg = plane(1);
    double* pb = plane(2);
    pr[i] = pr[i] * (1 - alpha) + r * alpha;
    pg[i] = pg[i] * (1 - alpha) + g * alpha;
    pb[i] = pb[i] * (1 - alpha) + b * alpha;
  }
};

void fill_disc(Canvas& c, double cx, double cy, double radius, double r, double g,
               double b) {
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
  const int y1 = std::min(c.h - 1, static_cast<int>(std::ceil(cy + radius)));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
  const int x1 = std::min(c.w - 1, static_cast<int>(std::ceil(cx + radius)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy <= radius * radius) c.blend(x, y, r, g, b, 1.0);
    }
  }
}

// Canonical landmark layout: eyes, nose, mouth, then evenly spaced points on
// the inner rim for configurations asking for more than the four face dots.
std::vector<Point> face_landmark_layout(const BBox& box, int n) {
  const double cx = box.cx(), cy = box.cy();
  const double a = box.width() * 0.5, b = box.height() * 0.5;
  std::vector<Point> pts{{cx - 0.35 * a, cy - 0.3 * b},
                         {cx + 0.35 * a, cy - 0.3 * b},
                         {cx, cy + 0.08 * b},
                         {cx, cy + 0.5 * b}};
  for (int k = 4; k < n; ++k) {
    const double phi = 2.0 * 3.14159265358979323846 * (k - 4) / std::max(1, n - 4);
    pts.push_back(Point{cx + 0.82 * a * std::cos(phi), cy + 0.82 * b * std::sin(phi)});
  }
  pts.resize(static_cast<size_t>(std::max(n, 4)));
  return pts;
}

void draw_face(Canvas& c, const BBox& box, Rng& rng, std::vector<Point>* marks, int n_marks) {
  const double cx = box.cx(), cy = box.cy();
  const double a = box.width() * 0.5, b = box.height() * 0.5;
  const double fr = rng.uniform(0.78, 0.92);
  const double fg = rng.uniform(0.6, 0.74);
  const double fb = rng.uniform(0.46, 0.58);

  const int y0 = std::max(0, static_cast<int>(std::floor(box.ymin)));
  const int y1 = std::min(c.h - 1, static_cast<int>(std::ceil(box.ymax)));
  const int x0 = std::max(0, static_cast<int>(std::floor(box.xmin)));
  const int x1 = std::min(c.w - 1, static_cast<int>(std::ceil(box.xmax)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double nx = (x - cx) / a, ny = (y - cy) / b;
      const double d = nx * nx + ny * ny;
      if (d > 1.0) continue;
      if (d > 0.82) {
        c.blend(x, y, fr * 0.35, fg * 0.35, fb * 0.35, 1.0);  // outline ring
      } else {
        const double shade = 1.0 - 0.12 * d;
        c.blend(x, y, fr * shade, fg * shade, fb * shade, 1.0);
      }
    }
  }

  // the four face dots: left eye, right eye, nose, mouth
  const double dot = std::max(1.2, 0.11 * std::min(a, b));
  const std::vector<Point> pts = face_landmark_layout(box, n_marks);
  fill_disc(c, pts[0].x, pts[0].y, dot, 0.08, 0.08, 0.12);
  fill_disc(c, pts[1].x, pts[1].y, dot, 0.08, 0.08, 0.12);
  fill_disc(c, pts[2].x, pts[2].y, dot * 0.8, 0.45, 0.25, 0.2);
  fill_disc(c, pts[3].x, pts[3].y, dot * 0.9, 0.55, 0.15, 0.15);
  if (marks) *marks = pts;
}

}  // namespace

SceneAnnotation generate_scene(uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed(seed));
  Canvas canvas(cfg.width, cfg.height);

  // background: vertical gradient between two muted colors
  double top[3], bot[3];
  for (int c = 0; c < 3; ++c) {
    top[c] = rng.uniform(0.15, 0.45);
    bot[c] = rng.uniform(0.15, 0.45);
  }
  for (int c = 0; c < 3; ++c) {
    double* plane = canvas.plane(c);
    for (int y = 0; y < cfg.height; ++y) {
      const double t = cfg.height > 1 ? static_cast<double>(y) / (cfg.height - 1) : 0.0;
      const double v = top[c] * (1 - t) + bot[c] * t;
      for (int x = 0; x < cfg.width; ++x) plane[static_cast<size_t>(y) * cfg.width + x] = v;
    }
  }

  // clutter rectangles
  for (int i = 0; i < cfg.clutter_count; ++i) {
    const double rw = rng.uniform(6, cfg.width * 0.35);
    const double rh = rng.uniform(6, cfg.height * 0.35);
    const double rx = rng.uniform(-rw * 0.5, cfg.width - rw * 0.5);
    const double ry = rng.uniform(-rh * 0.5, cfg.height - rh * 0.5);
    const double cr = rng.uniform(0.05, 0.75);
    const double cg = rng.uniform(0.05, 0.75);
    const double cb = rng.uniform(0.05, 0.75);
    const double alpha = rng.uniform(0.4, 1.0);
    const int y0 = std::max(0, static_cast<int>(ry));
    const int y1 = std::min(cfg.height - 1, static_cast<int>(ry + rh));
    const int x0 = std::max(0, static_cast<int>(rx));
    const int x1 = std::min(cfg.width - 1, static_cast<int>(rx + rw));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) canvas.blend(x, y, cr, cg, cb, alpha);
    }
  }

  // objects: rejection-sampled so boxes barely overlap
  SceneAnnotation scene;
  const int count = cfg.min_objects +
                    static_cast<int>(cfg.max_objects > cfg.min_objects
                                         ? rng.uniform_index(cfg.max_objects - cfg.min_objects + 1)
                                         : 0);
  std::vector<BBox> placed;
  for (int i = 0; i < count; ++i) {
    bool ok = false;
    BBox box;
    for (int attempt = 0; attempt < 60 && !ok; ++attempt) {
      const double h = rng.uniform(cfg.min_height, cfg.max_height);
      const double w = h * rng.uniform(0.7, 0.9);
      const double margin = 2.0;
      if (w + 2 * margin >= cfg.width || h + 2 * margin >= cfg.height) continue;
      const double cx = rng.uniform(w * 0.5 + margin, cfg.width - 1 - w * 0.5 - margin);
      const double cy = rng.uniform(h * 0.5 + margin, cfg.height - 1 - h * 0.5 - margin);
      box = BBox{cx - w * 0.5, cy - h * 0.5, cx + w * 0.5, cy + h * 0.5};
      ok = true;
      for (const BBox& other : placed) {
        if (iou(box, other) > 0.02) {
          ok = false;
          break;
        }
      }
    }
    if (!ok) continue;  // crowded scene: place fewer objects
    placed.push_back(box);

    std::vector<Point> marks;
    draw_face(canvas, box, rng, &marks, cfg.n_landmarks);
    AnnotatedObject obj;
    obj.box = box;
    const bool annotated = rng.bernoulli(cfg.landmark_fraction);
    obj.landmarks.resize(static_cast<size_t>(cfg.n_landmarks));
    if (annotated) {
      for (int k = 0; k < cfg.n_landmarks; ++k) obj.landmarks[static_cast<size_t>(k)] = marks[static_cast<size_t>(k)];
    }
    scene.objects.push_back(std::move(obj));
  }

  // light per-pixel noise, shared across channels
  {
    double* pr = canvas.plane(0);
    double* pg = canvas.plane(1);
    double* pb = canvas.plane(2);
    const size_t n = static_cast<size_t>(cfg.width) * cfg.height;
    for (size_t i = 0; i < n; ++i) {
      const double d = rng.uniform(-0.025, 0.025);
      pr[i] += d;
      pg[i] += d;
      pb[i] += d;
    }
  }

  Tensor t = Tensor::from_data({3, cfg.height, cfg.width}, std::move(canvas.px));
  scene.image = tensor_to_image(t);
  return scene;
}

// ---- patch sampling ---------------------------------------------------------

Point PatchTransform::scene_to_patch(const Point& p) const {
  const double half = (out_size - 1) * 0.5;
  double u = (p.x - cx) / step + half;
  if (flip) u = (out_size - 1) - u;
  return Point{u, (p.y - cy) / step + half};
}

Point PatchTransform::patch_to_scene(const Point& p) const {
  const double half = (out_size - 1) * 0.5;
  const double u = flip ? (out_size - 1) - p.x : p.x;
  return Point{(u - half) * step + cx, (p.y - half) * step + cy};
}

BBox PatchTransform::scene_to_patch_box(const BBox& b) const {
  const Point p0 = scene_to_patch(Point{b.xmin, b.ymin});
  const Point p1 = scene_to_patch(Point{b.xmax, b.ymax});
  return BBox{std::min(p0.x, p1.x), std::min(p0.y, p1.y), std::max(p0.x, p1.x),
              std::max(p0.y, p1.y)};
}

Tensor extract_patch(const Image8& scene, const PatchTransform& t, Rng& rng) {
  const int p = t.out_size;
  Tensor out = Tensor::zeros({3, p, p});
  double* d = out.data();
  const size_t plane = static_cast<size_t>(p) * p;
  const int w = scene.width, h = scene.height;
  for (int py = 0; py < p; ++py) {
    for (int px = 0; px < p; ++px) {
      const Point s = t.patch_to_scene(Point{static_cast<double>(px), static_cast<double>(py)});
      const size_t i = static_cast<size_t>(py) * p + px;
      if (s.x < -0.5 || s.x > w - 0.5 || s.y < -0.5 || s.y > h - 0.5) {
        // off-scene: fill with clutter noise
        const double v = rng.uniform(0.15, 0.75);
        d[i] = v;
        d[plane + i] = std::clamp(v + rng.uniform(-0.15, 0.15), 0.0, 1.0);
        d[2 * plane + i] = std::clamp(v + rng.uniform(-0.15, 0.15), 0.0, 1.0);
        continue;
      }
      const int x0 = std::clamp(static_cast<int>(std::floor(s.x)), 0, w - 1);
      const int y0 = std::clamp(static_cast<int>(std::floor(s.y)), 0, h - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const double fx = std::clamp(s.x - x0, 0.0, 1.0);
      const double fy = std::clamp(s.y - y0, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        const double v00 = scene.pixel(x0, y0)[c] / 255.0;
        const double v01 = scene.pixel(x1, y0)[c] / 255.0;
        const double v10 = scene.pixel(x0, y1)[c] / 255.0;
        const double v11 = scene.pixel(x1, y1)[c] / 255.0;
        d[c * plane + i] =
            (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy;
      }
    }
  }
  return out;
}

namespace {

std::vector<AnnotatedObject> transform_annotation(
    const std::vector<AnnotatedObject>& objects, const PatchTransform& t,
    const std::vector<std::pair<int, int>>& flip_pairs) {
  std::vector<AnnotatedObject> out;
  const double limit = t.out_size - 1.0;
  for (const AnnotatedObject& obj : objects) {
    AnnotatedObject mapped;
    mapped.box = t.scene_to_patch_box(obj.box);
    if (mapped.box.xmax < 0.0 || mapped.box.xmin > limit || mapped.box.ymax < 0.0 ||
        mapped.box.ymin > limit) {
      continue;  // entirely outside the patch
    }
    mapped.landmarks.resize(obj.landmarks.size());
    for (size_t k = 0; k < obj.landmarks.size(); ++k) {
      if (obj.landmarks[k]) mapped.landmarks[k] = t.scene_to_patch(*obj.landmarks[k]);
    }
    if (t.flip) {
      for (const auto& [a, b] : flip_pairs) {
        if (a < static_cast<int>(mapped.landmarks.size()) &&
            b < static_cast<int>(mapped.landmarks.size())) {
          std::swap(mapped.landmarks[static_cast<size_t>(a)],
                    mapped.landmarks[static_cast<size_t>(b)]);
        }
      }
    }
    out.push_back(std::move(mapped));
  }
  return out;
}

}  // namespace

PatchSample sample_positive_patch(const SceneAnnotation& scene, size_t object_index,
                                  const SamplerConfig& cfg, Rng& rng) {
  if (object_index >= scene.objects.size()) {
    throw DataError("sample_positive_patch: object index out of range");
  }
  const AnnotatedObject& obj = scene.objects[object_index];
  const int p = cfg.patch_size;

  double scale_f = 1.0, jx = 0.0, jy = 0.0;
  bool flip = false;
  if (cfg.jitter) {
    scale_f = rng.uniform(cfg.scale_jitter_low, cfg.scale_jitter_high);
    const double shift = cfg.translation_frac * p;
    jx = rng.uniform(-shift, shift);
    jy = rng.uniform(-shift, shift);
    flip = rng.bernoulli(cfg.flip_prob);
  }

  PatchTransform t;
  t.out_size = p;
  t.step = obj.box.height() / (cfg.target_height * scale_f);
  t.cx = obj.box.cx() - jx * t.step;
  t.cy = obj.box.cy() - jy * t.step;
  t.flip = flip;

  PatchSample sample;
  sample.kind = PatchKind::positive;
  sample.transform = t;
  sample.patch = extract_patch(scene.image, t, rng);
  sample.annotation = transform_annotation(scene.objects, t, cfg.flip_pairs);
  return sample;
}

PatchSample sample_random_patch(const SceneAnnotation& scene,
                                const SamplerConfig& cfg, Rng& rng) {
  const int p = cfg.patch_size;
  const double zoom = std::exp(
      rng.uniform(std::log(cfg.random_zoom_low), std::log(cfg.random_zoom_high)));
  const double cx = rng.uniform(0.0, scene.image.width - 1.0);
  const double cy = rng.uniform(0.0, scene.image.height - 1.0);
  const bool flip = cfg.jitter && rng.bernoulli(cfg.flip_prob);

  PatchTransform t;
  t.out_size = p;
  t.step = 1.0 / zoom;
  t.cx = cx;
  t.cy = cy;
  t.flip = flip;

  PatchSample sample;
  sample.kind = PatchKind::random;
  sample.transform = t;
  sample.patch = extract_patch(scene.image, t, rng);
  sample.annotation = transform_annotation(scene.objects, t, cfg.flip_pairs);
  return sample;
}

}  // namespace densebox
