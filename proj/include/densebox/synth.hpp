#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "densebox/groundtruth.hpp"
#include "densebox/image.hpp"
#include "densebox/rng.hpp"
#include "densebox/tensor.hpp"

namespace densebox {

struct SceneAnnotation {
  Image8 image;
  std::vector<AnnotatedObject> objects;  // scene pixel coordinates
};

struct SceneConfig {
  int width = 320;
  int height = 240;
  int min_objects = 1;
  int max_objects = 3;
  double min_height = 40.0;
  double max_height = 120.0;
  int clutter_count = 40;
  int n_landmarks = 4;            // two eyes, nose, mouth
  double landmark_fraction = 1.0; // share of objects carrying landmark points

  void validate() const;
};

// Renders face-like objects (filled ellipse with eye/nose/mouth dots) over
// textured clutter. Annotations are exact by construction and the whole scene
// is a pure function of (seed, cfg).
SceneAnnotation generate_scene(uint64_t seed, const SceneConfig& cfg);

struct SamplerConfig {
  int patch_size = 240;
  double target_height = 50.0;
  double scale_jitter_low = 0.8;
  double scale_jitter_high = 1.25;
  double translation_frac = 25.0 / 240.0;  // of the patch side
  double flip_prob = 0.5;
  std::vector<std::pair<int, int>> flip_pairs{{0, 1}};  // landmark swaps on flip
  double random_zoom_low = 0.5;
  double random_zoom_high = 2.0;
  bool jitter = true;
};

// Square scene window mapped onto the patch raster, with optional mirroring.
// Coordinates use pixel centers at integers.
struct PatchTransform {
  double cx = 0, cy = 0;  // window center in scene coordinates
  double step = 1.0;      // scene pixels per patch pixel
  bool flip = false;
  int out_size = 0;

  Point scene_to_patch(const Point& p) const;
  Point patch_to_scene(const Point& p) const;
  BBox scene_to_patch_box(const BBox& b) const;
};

enum class PatchKind { positive, random };

struct PatchSample {
  Tensor patch;  // 3 x P x P in [0,1]
  std::vector<AnnotatedObject> annotation;  // patch coordinates
  PatchKind kind = PatchKind::positive;
  PatchTransform transform;
};

// Crop centered on one object, rescaled so its height hits target_height,
// then jittered: mirror with flip_prob, translation within
// +-translation_frac * patch_size, scale factor in the jitter range.
PatchSample sample_positive_patch(const SceneAnnotation& scene, size_t object_index,
                                  const SamplerConfig& cfg, Rng& rng);

// Uniform location, log-uniform zoom over the configured range.
PatchSample sample_random_patch(const SceneAnnotation& scene,
                                const SamplerConfig& cfg, Rng& rng);

// Bilinear patch extraction; samples outside the scene are filled with
// generated clutter noise drawn from `rng`.
Tensor extract_patch(const Image8& scene, const PatchTransform& t, Rng& rng);

}  // namespace densebox
