#pragma once

#include "unportrait/core.hpp"

#include <Eigen/Dense>
#include <array>

namespace unportrait {

// 35mm-equivalent convention: pixel scale is image_width / 36mm regardless of
// aspect, pixels are square.
constexpr double kSensorWidthMm = 36.0;

// Canonical portrait shot: 128.4mm at 160cm. The framing law below keeps the
// eye-plane magnification equal to this for every distance.
constexpr double kCanonicalDistanceCm = 160.0;
constexpr double kCanonicalFocalMm = 128.4;

// Valid query range for the probe classifier, cm (14mm-105mm equivalents).
constexpr double kQueryMinCm = 17.4;
constexpr double kQueryMaxCm = 130.0;

// Lower edges of the 8 distance intervals, cm. Interval i is [edge[i], edge[i+1]),
// the last is [168, inf).
constexpr std::array<double, 8> kDistanceBinEdgesCm = {23.0, 26.0, 30.0, 35.0, 43.0, 62.0, 105.0, 168.0};
constexpr int kDistanceBinCount = 8;

// Portrait framing defaults at 512x512: the right-eye-inner anchor pixel and
// the eye-inner separation every aligned image carries. Both scale linearly
// with the output size.
constexpr double kAnchorX512 = 216.0;
constexpr double kAnchorY512 = 216.0;
constexpr double kEyeSepPx512 = 96.0;

struct CameraConfig {
  double focal_mm = kCanonicalFocalMm;
  int image_width = 512;
  int image_height = 512;
  Eigen::Vector2d principal_point{256.0, 256.0};

  void validate() const;
};

struct Pose {
  double pitch_deg = 0.0;
  double yaw_deg = 0.0;
  double roll_deg = 0.0;

  // Intrinsic rotation applied to head-frame points, Rz(roll)*Rx(pitch)*Ry(yaw).
  Eigen::Matrix3d rotation() const;
};

struct ShotParams {
  double distance_cm = kCanonicalDistanceCm;
  Pose pose;
  double focal_mm = kCanonicalFocalMm;

  void validate() const;
};

struct DistanceLabel {
  int index = 0;
  bool clamped = false;  // true when the distance fell below the first edge

  bool operator==(const DistanceLabel&) const = default;
};

// Perspective projection of a camera-space point (cm, +z forward) to pixel
// coordinates: (u,v) = principal_point + (f/36) * image_width * (x/z, y/z).
// Throws std::domain_error when z <= 0.
Eigen::Vector2d project(const Eigen::Vector3d& point_cm, const CameraConfig& cam);

// Framing law f = D * 128.4mm / 160cm and its exact inverse.
double focal_for_distance(double distance_cm);
double distance_for_focal(double focal_mm);

// Shot at distance d with the framing-consistent focal.
ShotParams make_shot(double distance_cm, const Pose& pose = {});

// Distance interval label; distances below the first edge clamp to label 0
// with the clamped flag set. Non-positive distances are a domain error.
DistanceLabel bin_label(double distance_cm);

// Draw a query distance: log2(q) ~ N(log2(true_d), sigma^2), clamped to the
// valid query range. sigma = 0 returns true_d (clamped), used by tests.
double sample_query_logdistance(double true_distance_cm, Rng& rng, double sigma = 0.5);

}  // namespace unportrait
