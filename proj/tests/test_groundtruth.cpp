#include <doctest.h>

#include <cmath>

#include "densebox/errors.hpp"
#include "densebox/groundtruth.hpp"
#include "densebox/rng.hpp"
#include "testutil.hpp"

using namespace densebox;

namespace {

GeometryConfig default_geo(int n_landmarks = 0) {
  GeometryConfig g;
  g.n_landmarks = n_landmarks;
  return g;
}

// in-range box fully inside the patch, height in [40, 62] px
AnnotatedObject random_in_range_object(Rng& rng, const GeometryConfig& g) {
  const double h = rng.uniform(40.0, 62.0);
  const double w = h * rng.uniform(0.7, 1.05);
  const double cx = rng.uniform(w / 2 + 1, g.patch_size - 2 - w / 2);
  const double cy = rng.uniform(h / 2 + 1, g.patch_size - 2 - h / 2);
  AnnotatedObject obj;
  obj.box = BBox{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
  return obj;
}

int64_t positive_count(const GroundTruthMap& gt) { return count_ones(gt.score); }

}  // namespace

TEST_CASE("empty annotation encodes to all-zero maps") {
  const GeometryConfig g = default_geo(2);
  GroundTruthMap gt = encode_patch({}, g);
  CHECK(count_ones(gt.score) == 0);
  CHECK(count_ones(gt.ignore) == 0);
  CHECK(count_ones(gt.landmarks) == 0);
  for (int64_t i = 0; i < gt.reg.size(); ++i) CHECK(gt.reg.data()[i] == 0.0);
}

TEST_CASE("centered box labels a circle matching the brute-force lattice count") {
  const GeometryConfig g = default_geo();
  // h = 50 px -> h_out = 12.5, r_c = 3.75, centered in the 60x60 map
  AnnotatedObject obj;
  obj.box = BBox{100, 95, 140, 145};  // 40x50
  GroundTruthMap gt = encode_patch({obj}, g);

  const double cx = (100 + 140) / 2.0 / 4.0, cy = (95 + 145) / 2.0 / 4.0;
  const double r = 0.3 * 12.5;
  int64_t expected = 0;
  for (int y = 0; y < 60; ++y) {
    for (int x = 0; x < 60; ++x) {
      const double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy <= r * r) ++expected;
    }
  }
  CHECK(expected > 0);
  CHECK(positive_count(gt) == expected);
}

TEST_CASE("boxes outside the scale range contribute nothing positive") {
  const GeometryConfig g = default_geo();
  AnnotatedObject big;
  big.box = BBox{100, 95, 140, 145};
  AnnotatedObject small;  // h=20 -> relative scale 0.4 < 0.8
  small.box = BBox{30, 30, 46, 50};
  GroundTruthMap both = encode_patch({big, small}, g);
  GroundTruthMap only_big = encode_patch({big}, g);
  CHECK(positive_count(both) == positive_count(only_big));

  GroundTruthMap only_small = encode_patch({small}, g);
  CHECK(positive_count(only_small) == 0);
}

TEST_CASE("fully-outside boxes are skipped with a count; straddling boxes clip") {
  const GeometryConfig g = default_geo();
  AnnotatedObject outside;
  outside.box = BBox{-80, -80, -30, -20};
  GroundTruthMap gt = encode_patch({outside}, g);
  CHECK(gt.skipped_boxes == 1);
  CHECK(positive_count(gt) == 0);

  AnnotatedObject straddle;
  straddle.box = BBox{-10, 100, 30, 150};  // clips to h=50, w=30
  GroundTruthMap gt2 = encode_patch({straddle}, g);
  CHECK(gt2.skipped_boxes == 0);
}

TEST_CASE("compute_ignore_flags marks the exact lattice disc") {
  Tensor score = Tensor::zeros({1, 20, 20});
  score.at(0, 5, 5) = 1.0;
  Tensor ign = compute_ignore_flags(score, 2.0);
  int64_t marked = count_ones(ign);
  CHECK(marked == 12);
  // every marked pixel is within distance 2 and not the positive itself
  for (int y = 0; y < 20; ++y) {
    for (int x = 0; x < 20; ++x) {
      const double d2 = (y - 5.0) * (y - 5.0) + (x - 5.0) * (x - 5.0);
      const bool expect = d2 <= 4.0 && !(x == 5 && y == 5);
      CHECK(ign.at(0, y, x) == (expect ? 1.0 : 0.0));
    }
  }

  Tensor zeros = Tensor::zeros({1, 8, 8});
  CHECK(count_ones(compute_ignore_flags(zeros, 2.0)) == 0);

  Tensor full = Tensor::full({1, 8, 8}, 1.0);
  CHECK(count_ones(compute_ignore_flags(full, 2.0)) == 0);
}

TEST_CASE("regression targets at corners and centers") {
  GeometryConfig g = default_geo();
  const BBox box{10, 20, 20, 32.5};  // 10 x 12.5 in output units
  const auto corner = regression_target(10, 20, box, g);
  CHECK(corner[0] == 0.0);
  CHECK(corner[1] == 0.0);
  CHECK(corner[2] == doctest::Approx(-10 / 12.5));
  CHECK(corner[3] == doctest::Approx(-12.5 / 12.5));

  const auto center = regression_target(15, 26.25, box, g);
  CHECK(center[0] == doctest::Approx(0.4));
  CHECK(center[1] == doctest::Approx(0.5));
  CHECK(center[2] == doctest::Approx(-0.4));
  CHECK(center[3] == doctest::Approx(-0.5));

  // decode inverse reproduces the box
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const BBox b{rng.uniform(0, 30), rng.uniform(0, 30), rng.uniform(30, 59),
                 rng.uniform(30, 59)};
    const double x = rng.uniform(0, 59), y = rng.uniform(0, 59);
    const auto t = regression_target(x, y, b, g);
    const BBox back = decode_regression(x, y, t, g.reg_norm);
    CHECK(testutil::same_box(back, b, 1e-9));
  }
}

TEST_CASE("positive pixels decode to their nearest in-range box") {
  Rng rng(77);
  const GeometryConfig g = default_geo();
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<AnnotatedObject> objs;
    const int n = 1 + static_cast<int>(rng.uniform_index(3));
    for (int i = 0; i < n && objs.size() < 3; ++i) {
      AnnotatedObject cand = random_in_range_object(rng, g);
      bool ok = true;
      for (const auto& o : objs) {
        if (iou(o.box, cand.box) > 0.2) ok = false;
      }
      if (ok) objs.push_back(cand);
    }
    GroundTruthMap gt = encode_patch(objs, g);
    const int out = g.out_size();
    const size_t plane = static_cast<size_t>(out) * out;
    for (int y = 0; y < out; ++y) {
      for (int x = 0; x < out; ++x) {
        if (gt.score.at(0, y, x) != 1.0) continue;
        // nearest in-range box center
        double best = 1e300;
        BBox nearest;
        for (const auto& o : objs) {
          const BBox bo{o.box.xmin / 4, o.box.ymin / 4, o.box.xmax / 4, o.box.ymax / 4};
          const double d = (x - bo.cx()) * (x - bo.cx()) + (y - bo.cy()) * (y - bo.cy());
          if (d < best) {
            best = d;
            nearest = bo;
          }
        }
        const size_t i = static_cast<size_t>(y) * out + x;
        const std::array<double, 4> t = {gt.reg.data()[i], gt.reg.data()[plane + i],
                                         gt.reg.data()[2 * plane + i],
                                         gt.reg.data()[3 * plane + i]};
        const BBox back = decode_regression(x, y, t, g.reg_norm);
        CHECK(testutil::same_box(back, nearest, 1e-9));
      }
    }
  }
}

TEST_CASE("positives sit inside their boxes and never overlap ignore flags") {
  Rng rng(91);
  const GeometryConfig g = default_geo();
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<AnnotatedObject> objs{random_in_range_object(rng, g)};
    GroundTruthMap gt = encode_patch(objs, g);
    const int out = g.out_size();
    const BBox bo{objs[0].box.xmin / 4, objs[0].box.ymin / 4, objs[0].box.xmax / 4,
                  objs[0].box.ymax / 4};
    for (int y = 0; y < out; ++y) {
      for (int x = 0; x < out; ++x) {
        const double s = gt.score.at(0, y, x);
        const double ig = gt.ignore.at(0, y, x);
        CHECK(s * ig == 0.0);
        if (s == 1.0) {
          CHECK(x >= bo.xmin);
          CHECK(x <= bo.xmax);
          CHECK(y >= bo.ymin);
          CHECK(y <= bo.ymax);
        }
      }
    }
  }
}

TEST_CASE("growing a box within the scale range never shrinks its circle") {
  const GeometryConfig g = default_geo();
  int64_t prev = -1;
  for (double h = 40.0; h <= 62.0; h += 1.0) {
    AnnotatedObject obj;
    const double cx = 120, cy = 120, w = 50;
    obj.box = BBox{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
    const int64_t count = positive_count(encode_patch({obj}, g));
    CHECK(count >= prev);
    prev = count;
  }
}

TEST_CASE("landmark channels label tiny discs for in-range objects only") {
  GeometryConfig g = default_geo(2);
  AnnotatedObject obj;
  obj.box = BBox{100, 95, 140, 145};
  obj.landmarks = {Point{110, 110}, Point{130, 110}};
  AnnotatedObject small;  // out of range: no landmark labels
  small.box = BBox{30, 30, 46, 50};
  small.landmarks = {Point{34, 36}, Point{42, 36}};
  GroundTruthMap gt = encode_patch({obj, small}, g);

  const size_t plane = 60 * 60;
  int64_t ch0 = 0, ch1 = 0;
  for (size_t i = 0; i < plane; ++i) {
    ch0 += gt.landmarks.data()[i] == 1.0;
    ch1 += gt.landmarks.data()[plane + i] == 1.0;
  }
  CHECK(ch0 > 0);
  CHECK(ch1 > 0);
  // a disc of radius 1 in output coords has at most 5 lattice points
  CHECK(ch0 <= 5);
  CHECK(ch1 <= 5);
  // the disc sits near the landmark, not near the out-of-range object
  for (int y = 0; y < 60; ++y) {
    for (int x = 0; x < 60; ++x) {
      if (gt.landmarks.at(0, y, x) == 1.0) {
        const double dx = x - 110 / 4.0, dy = y - 110 / 4.0;
        CHECK(dx * dx + dy * dy <= 1.0 + 1e-12);
      }
    }
  }

  // null landmarks are skipped
  obj.landmarks = {std::nullopt, Point{130, 110}};
  GroundTruthMap gt2 = encode_patch({obj}, g);
  int64_t c0 = 0;
  for (size_t i = 0; i < plane; ++i) c0 += gt2.landmarks.data()[i] == 1.0;
  CHECK(c0 == 0);

  // wrong landmark count is a data error
  AnnotatedObject bad = obj;
  bad.landmarks = {Point{1, 1}};
  CHECK_THROWS_AS(encode_patch({bad}, g), DataError);
}

TEST_CASE("horizontal flip of the annotation mirrors the encoded maps") {
  // mirror constant chosen so the output lattice maps onto itself:
  // x' = (patch_size - 4) - x mirrors output pixel i to out-1-i exactly
  Rng rng(55);
  const GeometryConfig g = default_geo();
  const double C = g.patch_size - 4.0;
  const int out = g.out_size();
  const size_t plane = static_cast<size_t>(out) * out;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<AnnotatedObject> objs{random_in_range_object(rng, g),
                                      random_in_range_object(rng, g)};
    std::vector<AnnotatedObject> flipped = objs;
    for (auto& o : flipped) {
      const double x0 = o.box.xmin, x1 = o.box.xmax;
      o.box.xmin = C - x1;
      o.box.xmax = C - x0;
    }
    GroundTruthMap a = encode_patch(objs, g);
    GroundTruthMap b = encode_patch(flipped, g);
    for (int y = 0; y < out; ++y) {
      for (int x = 0; x < out; ++x) {
        const int mx = out - 1 - x;
        CHECK(b.score.at(0, y, mx) == a.score.at(0, y, x));
        CHECK(b.ignore.at(0, y, mx) == a.ignore.at(0, y, x));
        const size_t ia = static_cast<size_t>(y) * out + x;
        const size_t ib = static_cast<size_t>(y) * out + mx;
        // dx_t' = -dx_b, dx_b' = -dx_t; y channels carry over
        CHECK(b.reg.data()[ib] == doctest::Approx(-a.reg.data()[2 * plane + ia]).epsilon(1e-12));
        CHECK(b.reg.data()[2 * plane + ib] == doctest::Approx(-a.reg.data()[ia]).epsilon(1e-12));
        CHECK(b.reg.data()[plane + ib] == doctest::Approx(a.reg.data()[plane + ia]).epsilon(1e-12));
        CHECK(b.reg.data()[3 * plane + ib] ==
              doctest::Approx(a.reg.data()[3 * plane + ia]).epsilon(1e-12));
      }
    }
  }
}
