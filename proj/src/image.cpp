#include "densebox/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "densebox/errors.hpp"

namespace densebox {

Image8 read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open image: " + path.string());
  std::string magic;
  is >> magic;
  if (magic != "P6") throw DataError("unsupported PPM magic in " + path.string());
  int w = 0, h = 0, maxval = 0;
  is >> w >> h >> maxval;
  if (!is || w <= 0 || h <= 0 || maxval != 255) {
    throw DataError("bad PPM header in " + path.string());
  }
  is.get();  // single whitespace after header
  Image8 img;
  img.width = w;
  img.height = h;
  img.rgb.resize(static_cast<size_t>(w) * h * 3);
  is.read(reinterpret_cast<char*>(img.rgb.data()),
          static_cast<std::streamsize>(img.rgb.size()));
  if (is.gcount() != static_cast<std::streamsize>(img.rgb.size())) {
    throw DataError("truncated PPM payload in " + path.string());
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image8& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write image: " + path.string());
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.rgb.data()),
           static_cast<std::streamsize>(img.rgb.size()));
  if (!os) throw DataError("image write failed: " + path.string());
}

Tensor image_to_tensor(const Image8& img) {
  if (img.width <= 0 || img.height <= 0) throw DataError("empty image");
  Tensor t = Tensor::zeros({3, img.height, img.width});
  double* d = t.data();
  const size_t plane = static_cast<size_t>(img.width) * img.height;
  for (size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      d[c * plane + i] = img.rgb[i * 3 + c] / 255.0;
    }
  }
  return t;
}

Image8 tensor_to_image(const Tensor& t) {
  if (t.shape().size() != 3 || t.dim(0) != 3) {
    throw ShapeError("tensor_to_image expects 3xHxW");
  }
  Image8 img;
  img.height = t.dim(1);
  img.width = t.dim(2);
  img.rgb.resize(static_cast<size_t>(img.width) * img.height * 3);
  const double* d = t.data();
  const size_t plane = static_cast<size_t>(img.width) * img.height;
  for (size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(d[c * plane + i], 0.0, 1.0);
      img.rgb[i * 3 + c] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
  }
  return img;
}

Tensor resize_bilinear(const Tensor& src, int out_h, int out_w) {
  if (src.shape().size() != 3) throw ShapeError("resize_bilinear expects CxHxW");
  if (out_h <= 0 || out_w <= 0) throw ShapeError("resize_bilinear: bad output size");
  const int c = src.dim(0), h = src.dim(1), w = src.dim(2);
  Tensor out = Tensor::zeros({c, out_h, out_w});
  const double fy = static_cast<double>(h) / out_h;
  const double fx = static_cast<double>(w) / out_w;

  std::vector<int> x0s(out_w), x1s(out_w);
  std::vector<double> wxs(out_w);
  for (int x = 0; x < out_w; ++x) {
    double sx = (x + 0.5) * fx - 0.5;
    double flo = std::floor(sx);
    double frac = sx - flo;
    int lo = static_cast<int>(flo);
    if (lo < 0) {
      lo = 0;
      frac = 0.0;
    } else if (lo >= w - 1) {
      lo = w - 1;
      frac = 0.0;
    }
    x0s[x] = lo;
    x1s[x] = std::min(lo + 1, w - 1);
    wxs[x] = frac;
  }

  const double* sd = src.data();
  double* od = out.data();
  for (int ch = 0; ch < c; ++ch) {
    const double* plane = sd + static_cast<size_t>(ch) * h * w;
    double* oplane = od + static_cast<size_t>(ch) * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      double sy = (y + 0.5) * fy - 0.5;
      double flo = std::floor(sy);
      double fry = sy - flo;
      int y0 = static_cast<int>(flo);
      if (y0 < 0) {
        y0 = 0;
        fry = 0.0;
      } else if (y0 >= h - 1) {
        y0 = h - 1;
        fry = 0.0;
      }
      const int y1 = std::min(y0 + 1, h - 1);
      const double* row0 = plane + static_cast<size_t>(y0) * w;
      const double* row1 = plane + static_cast<size_t>(y1) * w;
      double* orow = oplane + static_cast<size_t>(y) * out_w;
      for (int x = 0; x < out_w; ++x) {
        const double wx = wxs[x];
        const double top = row0[x0s[x]] * (1.0 - wx) + row0[x1s[x]] * wx;
        const double bot = row1[x0s[x]] * (1.0 - wx) + row1[x1s[x]] * wx;
        orow[x] = top * (1.0 - fry) + bot * fry;
      }
    }
  }
  return out;
}

Tensor pad_to_multiple(const Tensor& src, int m) {
  if (src.shape().size() != 3) throw ShapeError("pad_to_multiple expects CxHxW");
  const int c = src.dim(0), h = src.dim(1), w = src.dim(2);
  const int ph = ((h + m - 1) / m) * m;
  const int pw = ((w + m - 1) / m) * m;
  if (ph == h && pw == w) return src;
  Tensor out = Tensor::zeros({c, ph, pw});
  const double* sd = src.data();
  double* od = out.data();
  for (int ch = 0; ch < c; ++ch) {
    const double* plane = sd + static_cast<size_t>(ch) * h * w;
    double* oplane = od + static_cast<size_t>(ch) * ph * pw;
    for (int y = 0; y < ph; ++y) {
      const double* srow = plane + static_cast<size_t>(std::min(y, h - 1)) * w;
      double* orow = oplane + static_cast<size_t>(y) * pw;
      for (int x = 0; x < pw; ++x) orow[x] = srow[std::min(x, w - 1)];
    }
  }
  return out;
}

void draw_box(Image8& img, const BBox& box, uint8_t r, uint8_t g, uint8_t b) {
  const int x0 = std::clamp(static_cast<int>(std::lround(box.xmin)), 0, img.width - 1);
  const int x1 = std::clamp(static_cast<int>(std::lround(box.xmax)), 0, img.width - 1);
  const int y0 = std::clamp(static_cast<int>(std::lround(box.ymin)), 0, img.height - 1);
  const int y1 = std::clamp(static_cast<int>(std::lround(box.ymax)), 0, img.height - 1);
  auto put = [&](int x, int y) {
    uint8_t* p = img.pixel(x, y);
    p[0] = r;
    p[1] = g;
    p[2] = b;
  };
  for (int x = x0; x <= x1; ++x) {
    put(x, y0);
    put(x, y1);
  }
  for (int y = y0; y <= y1; ++y) {
    put(x0, y);
    put(x1, y);
  }
}

}  // namespace densebox
