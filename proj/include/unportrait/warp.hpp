#pragma once

#include "unportrait/flow.hpp"
#include "unportrait/image.hpp"

namespace unportrait {

struct WarpResult {
  ImageBuffer image;  // sparse splat target; image.mask mirrors hit
  PlaneU8 hit;
  long collisions = 0;
  long dropped = 0;
};

// Splats every valid source pixel to round((x,y) + flow). Collisions keep the
// smallest source depth when src_depth is given, else the last writer in
// row-major order.
WarpResult forward_warp(const ImageBuffer& src, const FlowMap& flow,
                        const Plane* src_depth = nullptr);

struct FillResult {
  ImageBuffer image;
  PlaneU8 interpolated;  // filled via triangulated linear interpolation
  PlaneU8 extrapolated;  // filled from the nearest hit (outside the hit hull)
};

// Fills unhit pixels inside region: piecewise-linear over a triangulation of
// the hit pixels where possible, nearest-hit color outside the hit hull.
// Throws std::invalid_argument with fewer than 3 non-collinear hits.
FillResult fill_scattered(const ImageBuffer& sparse, const PlaneU8& hit, const PlaneU8& region);

// out(x,y) = bilinear sample of target at (x,y) + flow. Samples that leave the
// target footprint (or sit on invalid flow) come back transparent with mask 0.
ImageBuffer backward_remap(const ImageBuffer& target, const FlowMap& flow);

// Bilinear resample of the vector field (validity-weighted), vectors scaled
// componentwise by the size ratio. Validity transfers nearest-neighbor to keep
// its ternary labels. new size must be at least 8x8.
FlowMap rescale_flow(const FlowMap& flow, int new_width, int new_height);

}  // namespace unportrait
