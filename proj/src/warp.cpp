#include "unportrait/warp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "unportrait/triangulate.hpp"

namespace unportrait {

WarpResult forward_warp(const ImageBuffer& src, const FlowMap& flow, const Plane* src_depth) {
  if (flow.width != src.width || flow.height != src.height)
    throw std::invalid_argument("forward_warp: flow dimensions must match the source image");
  if (src_depth && (src_depth->cols() != src.width || src_depth->rows() != src.height))
    throw std::invalid_argument("forward_warp: depth dimensions must match the source image");

  WarpResult out;
  out.image.reset(src.width, src.height, true);
  out.image.mask.setZero();
  out.hit = PlaneU8::Zero(src.height, src.width);
  Plane best_depth;
  if (src_depth) best_depth = Plane::Constant(src.height, src.width, std::numeric_limits<float>::infinity());

  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      if (flow.valid(y, x) == kFlowInvalid) continue;
      if (src.has_mask() && src.mask(y, x) <= 0.5f) continue;
      const long tx = std::lround(double(x) + double(flow.dx(y, x)));
      const long ty = std::lround(double(y) + double(flow.dy(y, x)));
      if (tx < 0 || tx >= src.width || ty < 0 || ty >= src.height) {
        ++out.dropped;
        continue;
      }
      const int ox = int(tx), oy = int(ty);
      if (out.hit(oy, ox)) {
        ++out.collisions;
        if (src_depth && (*src_depth)(y, x) >= best_depth(oy, ox)) continue;
      }
      for (int c = 0; c < 4; ++c) out.image.rgba[c](oy, ox) = src.rgba[size_t(c)](y, x);
      out.hit(oy, ox) = 1;
      out.image.mask(oy, ox) = 1.0f;
      if (src_depth) best_depth(oy, ox) = (*src_depth)(y, x);
    }
  }
  return out;
}

namespace {

// Exact 1D squared-distance transform with argmin sites
// (Felzenszwalb-Huttenlocher lower envelope of parabolas).
void dt1d(const std::vector<double>& f, const std::vector<int>& site, std::vector<double>& d,
          std::vector<int>& arg) {
  const int n = int(f.size());
  std::vector<int> v(f.size());
  std::vector<double> z(f.size() + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s;
    for (;;) {
      const int p = v[size_t(k)];
      s = ((f[size_t(q)] + double(q) * q) - (f[size_t(p)] + double(p) * p)) / (2.0 * (q - p));
      if (s > z[size_t(k)]) break;
      --k;
    }
    ++k;
    v[size_t(k)] = q;
    z[size_t(k)] = s;
    z[size_t(k) + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[size_t(k) + 1] < q) ++k;
    const int p = v[size_t(k)];
    d[size_t(q)] = double(q - p) * (q - p) + f[size_t(p)];
    arg[size_t(q)] = site.empty() ? p : site[size_t(p)];
  }
}

// Index of the nearest hit pixel (y * w + x) for every pixel.
std::vector<int> nearest_hit_sites(const PlaneU8& hit) {
  const int w = int(hit.cols()), h = int(hit.rows());
  const double inf = 1e20;
  // Pass 1: along x per row.
  std::vector<double> row_d(size_t(w) * h);
  std::vector<int> row_x(size_t(w) * h);
  {
    std::vector<double> f, d;
    std::vector<int> arg;
    f.resize(size_t(w));
    d.resize(size_t(w));
    arg.resize(size_t(w));
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) f[size_t(x)] = hit(y, x) ? 0.0 : inf;
      dt1d(f, {}, d, arg);
      for (int x = 0; x < w; ++x) {
        row_d[size_t(y) * w + x] = d[size_t(x)];
        row_x[size_t(y) * w + x] = arg[size_t(x)];
      }
    }
  }
  // Pass 2: along y per column, tracking the winning row.
  std::vector<int> out(size_t(w) * h, -1);
  {
    std::vector<double> f, d;
    std::vector<int> ys, arg;
    f.resize(size_t(h));
    d.resize(size_t(h));
    ys.resize(size_t(h));
    arg.resize(size_t(h));
    for (int y = 0; y < h; ++y) ys[size_t(y)] = y;
    for (int x = 0; x < w; ++x) {
      for (int y = 0; y < h; ++y) f[size_t(y)] = row_d[size_t(y) * w + x];
      dt1d(f, ys, d, arg);
      for (int y = 0; y < h; ++y) {
        const int sy = arg[size_t(y)];
        out[size_t(y) * w + x] = sy * w + row_x[size_t(sy) * w + x];
      }
    }
  }
  return out;
}

}  // namespace

FillResult fill_scattered(const ImageBuffer& sparse, const PlaneU8& hit, const PlaneU8& region) {
  const int w = sparse.width, h = sparse.height;
  if (int(hit.cols()) != w || int(hit.rows()) != h || int(region.cols()) != w ||
      int(region.rows()) != h)
    throw std::invalid_argument("fill_scattered: mask dimensions must match the image");

  std::vector<Eigen::Vector2i> sites;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (hit(y, x)) sites.emplace_back(x, y);

  FillResult out;
  out.image = sparse;
  if (!out.image.has_mask()) {
    out.image.mask = Plane::Zero(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.image.mask(y, x) = hit(y, x) ? 1.0f : 0.0f;
  }
  out.interpolated = PlaneU8::Zero(h, w);
  out.extrapolated = PlaneU8::Zero(h, w);

  bool any_needed = false;
  for (int y = 0; y < h && !any_needed; ++y)
    for (int x = 0; x < w; ++x)
      if (region(y, x) && !hit(y, x)) {
        any_needed = true;
        break;
      }
  if (!any_needed) return out;

  const Triangulation tri = triangulate_points(sites);  // throws when degenerate

  // Piecewise-linear interpolation: rasterize each triangle inclusively with
  // exact integer barycentric weights, so affine images reproduce exactly.
  for (const auto& t : tri.triangles) {
    const Eigen::Vector2i a = tri.points[size_t(t[0])];
    const Eigen::Vector2i b = tri.points[size_t(t[1])];
    const Eigen::Vector2i c = tri.points[size_t(t[2])];
    const long long area = orient2d(a, b, c);
    if (area <= 0) continue;
    const int x0 = std::min({a.x(), b.x(), c.x()}), x1 = std::max({a.x(), b.x(), c.x()});
    const int y0 = std::min({a.y(), b.y(), c.y()}), y1 = std::max({a.y(), b.y(), c.y()});
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (!region(y, x) || hit(y, x)) continue;
        const Eigen::Vector2i p(x, y);
        const long long w0 = orient2d(b, c, p);
        const long long w1 = orient2d(c, a, p);
        const long long w2 = orient2d(a, b, p);
        if (w0 < 0 || w1 < 0 || w2 < 0) continue;
        const double l0 = double(w0) / double(area);
        const double l1 = double(w1) / double(area);
        const double l2 = double(w2) / double(area);
        for (int ch = 0; ch < 4; ++ch) {
          const auto& plane = sparse.rgba[size_t(ch)];
          out.image.rgba[size_t(ch)](y, x) =
              float(l0 * plane(a.y(), a.x()) + l1 * plane(b.y(), b.x()) + l2 * plane(c.y(), c.x()));
        }
        out.interpolated(y, x) = 1;
        out.image.mask(y, x) = 1.0f;
      }
    }
  }

  // Outside the hit hull: nearest-hit color.
  std::vector<int> nearest;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!region(y, x) || hit(y, x) || out.interpolated(y, x)) continue;
      if (nearest.empty()) nearest = nearest_hit_sites(hit);
      const int s = nearest[size_t(y) * w + x];
      const int sx = s % w, sy = s / w;
      for (int ch = 0; ch < 4; ++ch) out.image.rgba[size_t(ch)](y, x) = sparse.rgba[size_t(ch)](sy, sx);
      out.extrapolated(y, x) = 1;
      out.image.mask(y, x) = 1.0f;
    }
  }
  return out;
}

ImageBuffer backward_remap(const ImageBuffer& target, const FlowMap& flow) {
  ImageBuffer out;
  out.reset(flow.width, flow.height, true);
  out.mask.setZero();
  for (int c = 0; c < 4; ++c) out.rgba[size_t(c)].setZero();

  for (int y = 0; y < flow.height; ++y) {
    for (int x = 0; x < flow.width; ++x) {
      if (flow.valid(y, x) == kFlowInvalid) continue;
      const double cx = x + 0.5 + double(flow.dx(y, x));
      const double cy = y + 0.5 + double(flow.dy(y, x));
      if (!bilinear_in_bounds(target.width, target.height, cx, cy)) continue;
      for (int c = 0; c < 4; ++c)
        out.rgba[size_t(c)](y, x) = sample_bilinear(target.rgba[size_t(c)], cx, cy);
      out.mask(y, x) = target.has_mask() ? sample_bilinear(target.mask, cx, cy) : 1.0f;
    }
  }
  return out;
}

FlowMap rescale_flow(const FlowMap& flow, int new_width, int new_height) {
  if (new_width < 8 || new_height < 8)
    throw std::invalid_argument("rescale_flow: new size must be at least 8x8");
  const double sx = double(new_width) / flow.width;
  const double sy = double(new_height) / flow.height;

  FlowMap out;
  out.reset(new_width, new_height);
  for (int y = 0; y < new_height; ++y) {
    for (int x = 0; x < new_width; ++x) {
      const double cx = (x + 0.5) / sx;
      const double cy = (y + 0.5) / sy;
      const int nx = std::clamp(int(std::floor(cx)), 0, flow.width - 1);
      const int ny = std::clamp(int(std::floor(cy)), 0, flow.height - 1);
      out.valid(y, x) = flow.valid(ny, nx);
      if (flow.valid(ny, nx) == kFlowInvalid) {
        out.dx(y, x) = 0.0f;
        out.dy(y, x) = 0.0f;
        continue;
      }
      const double gx = cx - 0.5, gy = cy - 0.5;
      const int x0 = int(std::floor(gx)), y0 = int(std::floor(gy));
      const double fx = gx - x0, fy = gy - y0;
      double wsum = 0.0, vx = 0.0, vy = 0.0;
      for (int j = 0; j < 2; ++j) {
        for (int i = 0; i < 2; ++i) {
          const int px = std::clamp(x0 + i, 0, flow.width - 1);
          const int py = std::clamp(y0 + j, 0, flow.height - 1);
          if (flow.valid(py, px) == kFlowInvalid) continue;
          const double wgt = (i ? fx : 1.0 - fx) * (j ? fy : 1.0 - fy);
          wsum += wgt;
          vx += wgt * flow.dx(py, px);
          vy += wgt * flow.dy(py, px);
        }
      }
      out.dx(y, x) = float(vx / wsum * sx);
      out.dy(y, x) = float(vy / wsum * sy);
    }
  }
  return out;
}

}  // namespace unportrait
