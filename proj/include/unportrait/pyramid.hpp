#pragma once

#include <vector>

#include "unportrait/image.hpp"

namespace unportrait {

// 5-tap binomial (1,4,6,4,1)/16, reflected border (edge not repeated).
Plane blur_binomial5(const Plane& p);

// Blur then keep even-index samples; output is ceil(n/2) per side.
Plane pyr_down(const Plane& p);

// Zero-stuff even indices to (out_w, out_h) then blur with 4x gain.
Plane pyr_up(const Plane& p, int out_w, int out_h);

// levels+1 entries: [G0 .. G_levels].
std::vector<Plane> gaussian_pyramid(const Plane& p, int levels);

// levels+1 entries: [L0 .. L_{levels-1}, residual G_levels].
std::vector<Plane> laplacian_pyramid(const Plane& p, int levels);

Plane collapse_laplacian(const std::vector<Plane>& pyr);

// Largest admissible level count: floor(log2(min(w,h))) - 2.
int max_pyramid_levels(int width, int height);

// Burt-Adelson blend of RGBA under a soft mask (1 = fg). levels = 0 degrades
// to a plain linear blend. Throws on dimension mismatch or levels out of
// [0, max_pyramid_levels].
ImageBuffer laplacian_blend(const ImageBuffer& fg, const ImageBuffer& bg, const Plane& mask,
                            int levels);

// Softens a binary mask by repeated binomial blurs (~2 px feather per the
// default).
Plane feather_mask(const Plane& mask, int passes = 2);

}  // namespace unportrait
