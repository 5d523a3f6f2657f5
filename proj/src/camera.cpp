#include "unportrait/camera.hpp"

#include <algorithm>
#include <cmath>

namespace unportrait {

void CameraConfig::validate() const {
  if (focal_mm <= 0.0) throw std::invalid_argument("CameraConfig: focal must be positive");
  if (image_width <= 0 || image_height <= 0)
    throw std::invalid_argument("CameraConfig: image size must be positive");
  if (principal_point.x() < 0.0 || principal_point.x() > image_width ||
      principal_point.y() < 0.0 || principal_point.y() > image_height)
    throw std::invalid_argument("CameraConfig: principal point outside image bounds");
}

Eigen::Matrix3d Pose::rotation() const {
  const double d2r = M_PI / 180.0;
  Eigen::Matrix3d rx = Eigen::AngleAxisd(pitch_deg * d2r, Eigen::Vector3d::UnitX()).toRotationMatrix();
  Eigen::Matrix3d ry = Eigen::AngleAxisd(yaw_deg * d2r, Eigen::Vector3d::UnitY()).toRotationMatrix();
  Eigen::Matrix3d rz = Eigen::AngleAxisd(roll_deg * d2r, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  return rz * rx * ry;
}

void ShotParams::validate() const {
  if (distance_cm <= 0.0) throw std::invalid_argument("ShotParams: distance must be positive");
  if (focal_mm <= 0.0) throw std::invalid_argument("ShotParams: focal must be positive");
}

Eigen::Vector2d project(const Eigen::Vector3d& point_cm, const CameraConfig& cam) {
  if (point_cm.z() <= 0.0) throw std::domain_error("project: point behind camera");
  const double k = cam.focal_mm / kSensorWidthMm * double(cam.image_width);
  return cam.principal_point + k * Eigen::Vector2d(point_cm.x() / point_cm.z(), point_cm.y() / point_cm.z());
}

double focal_for_distance(double distance_cm) {
  if (distance_cm <= 0.0) throw std::domain_error("focal_for_distance: distance must be positive");
  return distance_cm * (kCanonicalFocalMm / kCanonicalDistanceCm);
}

double distance_for_focal(double focal_mm) {
  if (focal_mm <= 0.0) throw std::domain_error("distance_for_focal: focal must be positive");
  return focal_mm * (kCanonicalDistanceCm / kCanonicalFocalMm);
}

ShotParams make_shot(double distance_cm, const Pose& pose) {
  ShotParams s;
  s.distance_cm = distance_cm;
  s.pose = pose;
  s.focal_mm = focal_for_distance(distance_cm);
  s.validate();
  return s;
}

DistanceLabel bin_label(double distance_cm) {
  if (distance_cm <= 0.0) throw std::domain_error("bin_label: distance must be positive");
  if (distance_cm < kDistanceBinEdgesCm.front()) return {0, true};
  int idx = 0;
  for (int i = kDistanceBinCount - 1; i >= 0; --i) {
    if (distance_cm >= kDistanceBinEdgesCm[size_t(i)]) {
      idx = i;
      break;
    }
  }
  return {idx, false};
}

double sample_query_logdistance(double true_distance_cm, Rng& rng, double sigma) {
  if (true_distance_cm <= 0.0)
    throw std::domain_error("sample_query_logdistance: distance must be positive");
  if (sigma < 0.0) throw std::invalid_argument("sample_query_logdistance: sigma must be >= 0");
  if (sigma == 0.0) return std::clamp(true_distance_cm, kQueryMinCm, kQueryMaxCm);
  const double g = std::log2(true_distance_cm) + sigma * rng.normal();
  return std::clamp(std::exp2(g), kQueryMinCm, kQueryMaxCm);
}

}  // namespace unportrait
