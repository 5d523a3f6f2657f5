#pragma once

#include "unportrait/core.hpp"

#include <array>
#include <vector>

namespace unportrait {

// RGBA raster, channels in [0,1], plus an optional coverage mask (0/1).
// Planes are height x width.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::array<Plane, 4> rgba;
  Plane mask;  // empty when absent

  ImageBuffer() = default;
  ImageBuffer(int w, int h, bool with_mask = false) { reset(w, h, with_mask); }

  void reset(int w, int h, bool with_mask = false) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("ImageBuffer: non-positive size");
    width = w;
    height = h;
    for (auto& p : rgba) p = Plane::Zero(h, w);
    rgba[3] = Plane::Ones(h, w);
    mask = with_mask ? Plane::Zero(h, w) : Plane();
  }

  bool has_mask() const { return mask.size() > 0; }
  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
};

// Bilinear sample of one plane at continuous pixel-center coordinates
// (pixel (i,j) has its center at (i+0.5, j+0.5)). Caller clamps/validates range.
float sample_bilinear(const Plane& p, double cx, double cy);

// Partial derivatives of sample_bilinear with respect to cx and cy, mirroring
// its corner selection. Where the coordinate clamp binds the slope is 0.
void sample_bilinear_grad(const Plane& p, double cx, double cy, double* d_dcx, double* d_dcy);

// True when the bilinear footprint at that position stays inside the image.
inline bool bilinear_in_bounds(int w, int h, double cx, double cy) {
  return cx >= 0.5 && cy >= 0.5 && cx <= w - 0.5 && cy <= h - 0.5;
}

// Bilinear resize of a single plane to (new_w, new_h).
Plane resize_bilinear(const Plane& p, int new_w, int new_h);

// Box (area-average) downsample; exact for integer shrink factors, general otherwise.
Plane resize_area(const Plane& p, int new_w, int new_h);

ImageBuffer resize_bilinear(const ImageBuffer& img, int new_w, int new_h);
ImageBuffer resize_area(const ImageBuffer& img, int new_w, int new_h);

// Masked PSNR over RGB in [0,1]; mask entries > 0.5 count.
double masked_psnr(const ImageBuffer& a, const ImageBuffer& b, const Plane& mask);

// Masked mean absolute RGB difference in [0,1].
double masked_mean_abs_diff(const ImageBuffer& a, const ImageBuffer& b, const Plane& mask);

}  // namespace unportrait
