#pragma once

#include "unportrait/camera.hpp"

#include <vector>

namespace unportrait {

// Observed 2D landmarks paired with their reference 3D positions (cm, head
// frame). Entries with visible == 0 are ignored by the fit.
struct GeomLandmarkSet {
  std::vector<Eigen::Vector2d> observed_px;
  std::vector<Eigen::Vector3d> reference_cm;
  std::vector<uint8_t> visible;

  int visible_count() const;
  void validate() const;  // matching lengths, >= 4 visible
};

enum class FocalMode {
  kFramingCoupled,  // f = focal_for_distance(d) inside the model
  kFixed,           // f from the camera config; distance scale stays ambiguous up to depth
};

struct GeomFitResult {
  double distance_cm = 0.0;
  double rms_px = 0.0;  // sqrt(mean squared landmark error) at the fit
};

// Least-squares camera distance from landmark reprojection: minimizes
// sum over visible i of |observed_i - project(R(pose) * X_i + (0,0,d))|^2
// over log2 d by coarse grid + golden-section refinement. The pose is taken
// as known; the head sits on the optical axis at depth d.
GeomFitResult fit_distance_geometric(const GeomLandmarkSet& lms, const CameraConfig& cam,
                                     const Pose& pose,
                                     FocalMode mode = FocalMode::kFramingCoupled);

}  // namespace unportrait
