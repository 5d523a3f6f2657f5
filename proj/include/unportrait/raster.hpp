#pragma once

#include <array>

#include "unportrait/camera.hpp"
#include "unportrait/image.hpp"
#include "unportrait/mesh.hpp"

namespace unportrait {

constexpr double kNearPlaneCm = 5.0;

// Head-to-camera transform: rotate by the pose, flip y/z into the image
// frame (x right, y down, z away from the camera), then push back by the
// shot distance. q = R * p; returns (q.x, -q.y, dist - q.z).
Eigen::Vector3d to_camera(const Eigen::Vector3d& p_head, const Pose& pose, double distance_cm);

// visible: the landmark projects inside the image and nothing renders in
// front of it -- its depth is within 0.5% of the depth buffer at its pixel,
// or that pixel is empty while the landmark faces the camera (a silhouette
// landmark with background behind it).
struct LandmarkPx {
  Eigen::Vector2d px{0.0, 0.0};
  double depth = 0.0;
  bool visible = false;
};

struct RenderOutput {
  ImageBuffer color;  // mask = head coverage
  Plane depth;        // camera-space z, +inf off the head
  PlaneI32 tri;       // triangle id, -1 off the head
  Plane bary0, bary1;  // perspective-correct barycentrics of the winning triangle
  std::array<LandmarkPx, kLandmarkCount> landmarks;
  ShotParams shot;
  CameraConfig cam;
  bool all_behind = false;
};

// Z-buffered perspective rasterization, Lambertian under one fixed light.
//
// Pixel conventions (the per-pixel oracle in the tests mirrors these exactly):
//  - sample at pixel centers (x + 0.5, y + 0.5) in projected coordinates;
//  - edge function E(a, b, p) = (b.x - a.x) * (p.y - a.y)
//                             - (b.y - a.y) * (p.x - a.x), doubles;
//  - triangles with zero signed area are skipped; vertex order is flipped
//    when needed so the area is positive (no backface culling);
//  - coverage: all three edge values > 0, or == 0 on a top edge
//    (dy == 0, dx > 0) or a left edge (dy < 0);
//  - depth z = 1 / (l0/z0 + l1/z1 + l2/z2), strict < replaces, triangles
//    visited in index order;
//  - triangles touching z < 5 cm are skipped entirely.
RenderOutput rasterize(const TriMesh& mesh, const ShotParams& shot, const CameraConfig& cam);

}  // namespace unportrait
