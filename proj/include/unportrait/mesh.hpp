#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "unportrait/core.hpp"

namespace unportrait {

enum LandmarkId : int {
  kEyeInnerRight = 0,  // subject's right (negative x), the framing anchor point
  kEyeInnerLeft,
  kEyeOuterRight,
  kEyeOuterLeft,
  kNoseTip,
  kEarTipRight,
  kEarTipLeft,
  kMouthRight,
  kMouthLeft,
  kChin,
  kLandmarkCount
};

const char* landmark_name(int id);

enum Part : uint8_t { kPartFace = 0, kPartEarRight = 1, kPartEarLeft = 2 };

struct TriMesh {
  std::vector<Eigen::Vector3d> vertices;  // cm, +z toward the viewer, +y up
  std::vector<Eigen::Vector3i> triangles;
  std::vector<Eigen::Vector3d> albedo;   // per-vertex linear RGB
  std::vector<Eigen::Vector3d> normals;  // per-vertex unit normals
  std::vector<uint8_t> triangle_part;
  std::array<int, kLandmarkCount> landmarks;

  TriMesh() { landmarks.fill(-1); }

  // Checks index ranges, landmark completeness, distinct eye corners.
  void validate() const;
};

// Half of the eye-inner separation, sized so a canonically framed render puts
// 96 px between the eye inners at 512-wide output.
constexpr double kEyeInnerHalfSepCm = 0.5 * 96.0 * 160.0 * 36.0 / (128.4 * 512.0);

struct HeadParams {
  double radius_x = 8.4;   // skull semi-axis, cm; [7, 9.5]
  double radius_y = 11.0;  // [9.5, 12.5]
  double radius_z = 9.5;   // [8.5, 10.5]
  double nose_protrusion = 2.5;  // [0, 4]
  double ear_offset = 9.3;       // ear tip |x|; [radius_x + 0.8, 12]
  double ear_size = 2.0;         // flap radius; [1, 3]
  int stacks = 24;               // >= 12
  int slices = 32;               // >= 16, even
  uint64_t look_seed = 0;        // albedo pattern variation

  void validate() const;
};

// Closed ellipsoid skull with nose bump and open ear flaps; symmetric about
// x = 0, all landmarks assigned. Origin sits at the eye-inner midpoint.
TriMesh parametric_head(const HeadParams& params);

// In-range random head variation for dataset subjects.
HeadParams head_params_from_seed(uint64_t seed);

// Minimal Wavefront subset: v/vt/vn/f with fan triangulation, 1-based and
// negative indices. Landmarks come from a sidecar table of vertex ids.
TriMesh load_obj(std::istream& in, const std::array<int, kLandmarkCount>& landmark_vertices);

}  // namespace unportrait
