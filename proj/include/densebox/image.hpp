#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "densebox/geometry.hpp"
#include "densebox/tensor.hpp"

namespace densebox {

// 8-bit interleaved RGB raster; the on-disk scene format (PPM P6).
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;

  uint8_t* pixel(int x, int y) { return &rgb[(static_cast<size_t>(y) * width + x) * 3]; }
  const uint8_t* pixel(int x, int y) const {
    return &rgb[(static_cast<size_t>(y) * width + x) * 3];
  }
};

Image8 read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image8& img);

Tensor image_to_tensor(const Image8& img);   // 3xHxW in [0,1]
Image8 tensor_to_image(const Tensor& t);     // clamps to [0,1], quantizes

// Half-pixel-center bilinear resize with border clamp; the same kernel the
// in-net x2 upsampling uses.
Tensor resize_bilinear(const Tensor& src, int out_h, int out_w);

// Replicates the right/bottom borders up to the next multiple of `m`.
Tensor pad_to_multiple(const Tensor& src, int m);

void draw_box(Image8& img, const BBox& box, uint8_t r, uint8_t g, uint8_t b);

}  // namespace densebox
