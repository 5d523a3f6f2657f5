#include "unportrait/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <thread>

namespace unportrait {

int worker_count() {
  int n = int(std::thread::hardware_concurrency());
  if (n <= 0) n = 1;
  if (const char* env = std::getenv("UNPORTRAIT_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) n = std::min<long>(v, 256);
  }
  return n;
}

float sample_bilinear(const Plane& p, double cx, double cy) {
  const int w = int(p.cols()), h = int(p.rows());
  // Convert center coordinates to the sample lattice.
  double fx = cx - 0.5, fy = cy - 0.5;
  fx = std::clamp(fx, 0.0, double(w - 1));
  fy = std::clamp(fy, 0.0, double(h - 1));
  const int x0 = std::min(int(fx), w - 2 >= 0 ? w - 2 : 0);
  const int y0 = std::min(int(fy), h - 2 >= 0 ? h - 2 : 0);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double ax = fx - x0, ay = fy - y0;
  const double v00 = p(y0, x0), v01 = p(y0, x1), v10 = p(y1, x0), v11 = p(y1, x1);
  return float((1 - ay) * ((1 - ax) * v00 + ax * v01) + ay * ((1 - ax) * v10 + ax * v11));
}

void sample_bilinear_grad(const Plane& p, double cx, double cy, double* d_dcx, double* d_dcy) {
  const int w = int(p.cols()), h = int(p.rows());
  const double rx = cx - 0.5, ry = cy - 0.5;
  const bool x_in = rx >= 0.0 && rx <= double(w - 1);
  const bool y_in = ry >= 0.0 && ry <= double(h - 1);
  const double fx = std::clamp(rx, 0.0, double(w - 1));
  const double fy = std::clamp(ry, 0.0, double(h - 1));
  const int x0 = std::min(int(fx), w - 2 >= 0 ? w - 2 : 0);
  const int y0 = std::min(int(fy), h - 2 >= 0 ? h - 2 : 0);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double ax = fx - x0, ay = fy - y0;
  const double v00 = p(y0, x0), v01 = p(y0, x1), v10 = p(y1, x0), v11 = p(y1, x1);
  *d_dcx = x_in ? (1 - ay) * (v01 - v00) + ay * (v11 - v10) : 0.0;
  *d_dcy = y_in ? (1 - ax) * (v10 - v00) + ax * (v11 - v01) : 0.0;
}

Plane resize_bilinear(const Plane& p, int new_w, int new_h) {
  if (new_w <= 0 || new_h <= 0) throw std::invalid_argument("resize_bilinear: non-positive size");
  const int w = int(p.cols()), h = int(p.rows());
  if (w == new_w && h == new_h) return p;
  Plane out(new_h, new_w);
  const double sx = double(w) / new_w, sy = double(h) / new_h;
  for (int y = 0; y < new_h; ++y) {
    const double cy = (y + 0.5) * sy;
    for (int x = 0; x < new_w; ++x) {
      out(y, x) = sample_bilinear(p, (x + 0.5) * sx, cy);
    }
  }
  return out;
}

Plane resize_area(const Plane& p, int new_w, int new_h) {
  if (new_w <= 0 || new_h <= 0) throw std::invalid_argument("resize_area: non-positive size");
  const int w = int(p.cols()), h = int(p.rows());
  if (w == new_w && h == new_h) return p;
  Plane out(new_h, new_w);
  const double sx = double(w) / new_w, sy = double(h) / new_h;
  for (int y = 0; y < new_h; ++y) {
    const double y0 = y * sy, y1 = (y + 1) * sy;
    for (int x = 0; x < new_w; ++x) {
      const double x0 = x * sx, x1 = (x + 1) * sx;
      double acc = 0.0;
      for (int iy = int(y0); iy < int(std::ceil(y1)); ++iy) {
        const double wy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
        if (wy <= 0) continue;
        for (int ix = int(x0); ix < int(std::ceil(x1)); ++ix) {
          const double wx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
          if (wx <= 0) continue;
          acc += wx * wy * p(std::min(iy, h - 1), std::min(ix, w - 1));
        }
      }
      out(y, x) = float(acc / (sx * sy));
    }
  }
  return out;
}

namespace {

template <Plane (*ResizeFn)(const Plane&, int, int)>
ImageBuffer resize_image(const ImageBuffer& img, int new_w, int new_h) {
  ImageBuffer out;
  out.width = new_w;
  out.height = new_h;
  for (int c = 0; c < 4; ++c) out.rgba[size_t(c)] = ResizeFn(img.rgba[size_t(c)], new_w, new_h);
  if (img.has_mask()) out.mask = ResizeFn(img.mask, new_w, new_h);
  return out;
}

}  // namespace

ImageBuffer resize_bilinear(const ImageBuffer& img, int new_w, int new_h) {
  return resize_image<&resize_bilinear>(img, new_w, new_h);
}

ImageBuffer resize_area(const ImageBuffer& img, int new_w, int new_h) {
  return resize_image<&resize_area>(img, new_w, new_h);
}

double masked_psnr(const ImageBuffer& a, const ImageBuffer& b, const Plane& mask) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("masked_psnr: size mismatch");
  if (mask.rows() != a.height || mask.cols() != a.width)
    throw std::invalid_argument("masked_psnr: mask size mismatch");
  double se = 0.0;
  long n = 0;
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      if (mask(y, x) <= 0.5f) continue;
      for (int c = 0; c < 3; ++c) {
        const double d = double(a.rgba[size_t(c)](y, x)) - double(b.rgba[size_t(c)](y, x));
        se += d * d;
      }
      n += 3;
    }
  }
  if (n == 0) throw std::invalid_argument("masked_psnr: empty mask");
  const double mse = se / double(n);
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double masked_mean_abs_diff(const ImageBuffer& a, const ImageBuffer& b, const Plane& mask) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("masked_mean_abs_diff: size mismatch");
  double acc = 0.0;
  long n = 0;
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      if (mask(y, x) <= 0.5f) continue;
      for (int c = 0; c < 3; ++c)
        acc += std::abs(double(a.rgba[size_t(c)](y, x)) - double(b.rgba[size_t(c)](y, x)));
      n += 3;
    }
  }
  if (n == 0) throw std::invalid_argument("masked_mean_abs_diff: empty mask");
  return acc / double(n);
}

}  // namespace unportrait
