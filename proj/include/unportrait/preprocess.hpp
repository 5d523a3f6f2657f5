#pragma once

#include "unportrait/calibration.hpp"
#include "unportrait/camera.hpp"
#include "unportrait/image.hpp"

#include <array>

namespace unportrait {

// Alignment target: scale so the eye-inner separation hits target_ipd_px,
// translate the right eye inner onto the anchor, then crop or pad to the
// frame. Defaults match the generated data (96 px IPD, anchor 216,216 at 512).
struct PreprocessSpec {
  int width = 512;
  int height = 512;
  double target_ipd_px = kEyeSepPx512;
  Eigen::Vector2d anchor{kAnchorX512, kAnchorY512};
  std::array<float, 3> pad_color{0.0f, 0.0f, 0.0f};

  // anchor inside the frame, target IPD in (8, width/2)
  void validate() const;
};

// Eye-inner landmarks in continuous pixel coordinates of the input image.
struct EyeLandmarks {
  Eigen::Vector2d right_inner = Eigen::Vector2d::Zero();
  Eigen::Vector2d left_inner = Eigen::Vector2d::Zero();
};

struct PreprocessResult {
  ImageBuffer image;
  // Input pixel coordinates to output pixel coordinates (pure scale +
  // translation); .inverse() maps results back onto the original image.
  SimilarityTransform transform;
};

// Bilinear resample under the alignment transform; samples whose footprint
// leaves the input become pad_color with alpha and mask 0. Throws
// std::invalid_argument for a degenerate (zero) eye separation.
PreprocessResult preprocess(const ImageBuffer& img, const EyeLandmarks& eyes,
                            const PreprocessSpec& spec = {});

}  // namespace unportrait
