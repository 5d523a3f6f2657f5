#pragma once

#include "unportrait/core.hpp"

#include <Eigen/Dense>
#include <filesystem>
#include <vector>

namespace unportrait {

// One color-chart patch photographed by both cameras, linear RGB.
struct ChartSample {
  Eigen::Vector3d src = Eigen::Vector3d::Zero();
  Eigen::Vector3d ref = Eigen::Vector3d::Zero();
};

struct ColorFit {
  Eigen::Matrix3d matrix = Eigen::Matrix3d::Identity();
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();  // zero unless fitted affine
  bool affine = false;
  double rms = 0.0;  // root mean squared residual per channel sample

  Eigen::Vector3d apply(const Eigen::Vector3d& rgb) const { return matrix * rgb + offset; }
};

// Least-squares color correction mapping src patches onto ref: minimizes
// sum ||M*src (+ b) - ref||^2 via column-pivoted QR. The plain 3x3 fit needs
// >= 3 patches spanning rank 3; the affine variant adds an offset column and
// needs >= 4. Throws std::invalid_argument on too few, rank-deficient, or
// non-finite samples.
ColorFit fit_color_matrix(const std::vector<ChartSample>& samples, bool affine = false);

// Plane similarity p -> scale * R(theta) * p + t.
struct SimilarityTransform {
  double scale = 1.0;
  double theta_rad = 0.0;
  Eigen::Vector2d t = Eigen::Vector2d::Zero();

  Eigen::Matrix2d rotation() const;
  Eigen::Vector2d apply(const Eigen::Vector2d& p) const;
  SimilarityTransform inverse() const;
};

struct SimilarityFit {
  SimilarityTransform transform;
  double rms = 0.0;  // root mean squared point distance after alignment
};

// Closed-form least-squares alignment of src onto dst: centroid centering,
// cross-covariance SVD for the angle, variance-ratio scale. The rotation is
// always proper; mirrored data comes back as the best rotation-only fit with
// its residual, never as a reflection. Needs >= 2 pairs with non-coincident
// source points; a fit whose optimal scale collapses to zero (isotropic
// mirror) is rejected. Throws std::invalid_argument.
SimilarityFit fit_similarity(const std::vector<Eigen::Vector2d>& src,
                             const std::vector<Eigen::Vector2d>& dst);

// ---- structured-text interchange ---------------------------------------------
// Chart files: kind "chart-samples", one record per patch (sr sg sb rr rg rb).
// Point files: kind "point-pairs", one record per correspondence (sx sy dx dy).
// Reports: kind "calibration-report", one record per fitted item with the
// matrix or pose entries plus the residual.

void write_chart_samples(const std::filesystem::path& path, const std::vector<ChartSample>& samples);
std::vector<ChartSample> read_chart_samples(const std::filesystem::path& path);

struct PointPairs {
  std::vector<Eigen::Vector2d> src;
  std::vector<Eigen::Vector2d> dst;
};

void write_point_pairs(const std::filesystem::path& path, const PointPairs& pairs);
PointPairs read_point_pairs(const std::filesystem::path& path);

// Either pointer may be null; only fitted items are reported.
void write_calibration_report(const std::filesystem::path& path, const ColorFit* color,
                              const SimilarityFit* align);

}  // namespace unportrait
