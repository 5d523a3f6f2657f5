#pragma once

#include "unportrait/core.hpp"

namespace unportrait {

// Per-pixel validity states for a flow field.
enum : uint8_t {
  kFlowInvalid = 0,
  kFlowValid = 1,
  kFlowValidOccluded = 2,  // valid displacement, target surface hidden in the other view
};

// Dense forward displacement field: pixel (x, y) in the source maps to
// (x, y) + (dx, dy) in the target, both measured between pixel centers.
struct FlowMap {
  int width = 0;
  int height = 0;
  Plane dx, dy;
  PlaneU8 valid;

  FlowMap() = default;
  FlowMap(int w, int h) { reset(w, h); }

  void reset(int w, int h) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("FlowMap: non-positive size");
    width = w;
    height = h;
    dx = Plane::Zero(h, w);
    dy = Plane::Zero(h, w);
    valid = PlaneU8::Constant(h, w, kFlowValid);
  }

  bool is_valid(int x, int y) const { return valid(y, x) != kFlowInvalid; }
};

}  // namespace unportrait
