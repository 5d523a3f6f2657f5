#include "unportrait/pyramid.hpp"

#include <algorithm>
#include <stdexcept>

namespace unportrait {

namespace {

int reflect101(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i = std::abs(i) % period;
  return i < n ? i : period - i;
}

Plane blur_rows(const Plane& p) {
  const int h = int(p.rows()), w = int(p.cols());
  Plane out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double acc = 1.0 * p(y, reflect101(x - 2, w)) + 4.0 * p(y, reflect101(x - 1, w)) +
                         6.0 * p(y, x) + 4.0 * p(y, reflect101(x + 1, w)) +
                         1.0 * p(y, reflect101(x + 2, w));
      out(y, x) = float(acc / 16.0);
    }
  }
  return out;
}

Plane blur_cols(const Plane& p) {
  const int h = int(p.rows()), w = int(p.cols());
  Plane out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double acc = 1.0 * p(reflect101(y - 2, h), x) + 4.0 * p(reflect101(y - 1, h), x) +
                         6.0 * p(y, x) + 4.0 * p(reflect101(y + 1, h), x) +
                         1.0 * p(reflect101(y + 2, h), x);
      out(y, x) = float(acc / 16.0);
    }
  }
  return out;
}

}  // namespace

Plane blur_binomial5(const Plane& p) { return blur_cols(blur_rows(p)); }

Plane pyr_down(const Plane& p) {
  const Plane b = blur_binomial5(p);
  const int h = int(p.rows()), w = int(p.cols());
  const int oh = (h + 1) / 2, ow = (w + 1) / 2;
  Plane out(oh, ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) out(y, x) = b(2 * y, 2 * x);
  return out;
}

Plane pyr_up(const Plane& p, int out_w, int out_h) {
  if ((out_h + 1) / 2 != int(p.rows()) || (out_w + 1) / 2 != int(p.cols()))
    throw std::invalid_argument("pyr_up: target size does not halve back to the input size");
  Plane stuffed = Plane::Zero(out_h, out_w);
  for (int y = 0; y < int(p.rows()); ++y)
    for (int x = 0; x < int(p.cols()); ++x) stuffed(2 * y, 2 * x) = p(y, x);
  return blur_binomial5(stuffed) * 4.0f;
}

std::vector<Plane> gaussian_pyramid(const Plane& p, int levels) {
  std::vector<Plane> g;
  g.reserve(size_t(levels) + 1);
  g.push_back(p);
  for (int i = 0; i < levels; ++i) g.push_back(pyr_down(g.back()));
  return g;
}

std::vector<Plane> laplacian_pyramid(const Plane& p, int levels) {
  std::vector<Plane> g = gaussian_pyramid(p, levels);
  std::vector<Plane> l;
  l.reserve(g.size());
  for (int i = 0; i < levels; ++i)
    l.push_back(g[size_t(i)] -
                pyr_up(g[size_t(i) + 1], int(g[size_t(i)].cols()), int(g[size_t(i)].rows())));
  l.push_back(g.back());
  return l;
}

Plane collapse_laplacian(const std::vector<Plane>& pyr) {
  if (pyr.empty()) throw std::invalid_argument("collapse_laplacian: empty pyramid");
  Plane acc = pyr.back();
  for (int i = int(pyr.size()) - 2; i >= 0; --i) {
    const Plane& l = pyr[size_t(i)];
    acc = l + pyr_up(acc, int(l.cols()), int(l.rows()));
  }
  return acc;
}

int max_pyramid_levels(int width, int height) {
  const int m = std::min(width, height);
  if (m < 1) throw std::invalid_argument("max_pyramid_levels: non-positive size");
  int bit = 0;
  while ((1 << (bit + 1)) <= m) ++bit;
  return std::max(0, bit - 2);
}

ImageBuffer laplacian_blend(const ImageBuffer& fg, const ImageBuffer& bg, const Plane& mask,
                            int levels) {
  if (fg.width != bg.width || fg.height != bg.height || int(mask.cols()) != fg.width ||
      int(mask.rows()) != fg.height)
    throw std::invalid_argument("laplacian_blend: dimension mismatch");
  if (levels < 0 || levels > max_pyramid_levels(fg.width, fg.height))
    throw std::invalid_argument("laplacian_blend: level count out of range");

  const std::vector<Plane> m = gaussian_pyramid(mask, levels);
  ImageBuffer out;
  out.reset(fg.width, fg.height, fg.has_mask() || bg.has_mask());
  for (int c = 0; c < 4; ++c) {
    const std::vector<Plane> lf = laplacian_pyramid(fg.rgba[size_t(c)], levels);
    const std::vector<Plane> lb = laplacian_pyramid(bg.rgba[size_t(c)], levels);
    std::vector<Plane> mixed;
    mixed.reserve(lf.size());
    for (size_t i = 0; i < lf.size(); ++i)
      mixed.push_back(m[i] * lf[i] + (1.0f - m[i]) * lb[i]);
    out.rgba[size_t(c)] = collapse_laplacian(mixed);
  }
  if (out.has_mask()) {
    const Plane fm = fg.has_mask() ? fg.mask : Plane::Ones(fg.height, fg.width);
    const Plane bm = bg.has_mask() ? bg.mask : Plane::Ones(bg.height, bg.width);
    out.mask = mask * fm + (1.0f - mask) * bm;
  }
  return out;
}

Plane feather_mask(const Plane& mask, int passes) {
  Plane out = mask;
  for (int i = 0; i < passes; ++i) out = blur_binomial5(out);
  return out;
}

}  // namespace unportrait
