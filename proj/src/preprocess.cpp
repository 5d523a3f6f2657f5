#include "unportrait/preprocess.hpp"

#include <cmath>
#include <stdexcept>

namespace unportrait {

void PreprocessSpec::validate() const {
  if (width <= 0 || height <= 0) throw std::invalid_argument("PreprocessSpec: non-positive size");
  if (!(anchor.x() >= 0.0 && anchor.x() <= double(width) && anchor.y() >= 0.0 &&
        anchor.y() <= double(height)))
    throw std::invalid_argument("PreprocessSpec: anchor outside the target frame");
  if (!(target_ipd_px > 8.0 && target_ipd_px < 0.5 * double(width)))
    throw std::invalid_argument("PreprocessSpec: target IPD outside (8, width/2)");
  for (float c : pad_color)
    if (!std::isfinite(c)) throw std::invalid_argument("PreprocessSpec: non-finite pad color");
}

PreprocessResult preprocess(const ImageBuffer& img, const EyeLandmarks& eyes,
                            const PreprocessSpec& spec) {
  spec.validate();
  if (img.width <= 0 || img.height <= 0)
    throw std::invalid_argument("preprocess: empty input image");
  if (!eyes.right_inner.allFinite() || !eyes.left_inner.allFinite())
    throw std::invalid_argument("preprocess: non-finite eye landmarks");

  const double ipd = (eyes.left_inner - eyes.right_inner).norm();
  if (ipd < 1e-9) throw std::invalid_argument("preprocess: degenerate eye separation");

  PreprocessResult result;
  result.transform.scale = spec.target_ipd_px / ipd;
  result.transform.theta_rad = 0.0;
  result.transform.t = spec.anchor - result.transform.scale * eyes.right_inner;

  const SimilarityTransform inv = result.transform.inverse();
  const bool with_mask = img.has_mask();
  result.image.reset(spec.width, spec.height, with_mask);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const Eigen::Vector2d src = inv.apply({double(x) + 0.5, double(y) + 0.5});
      if (bilinear_in_bounds(img.width, img.height, src.x(), src.y())) {
        for (int c = 0; c < 4; ++c)
          result.image.rgba[c](y, x) = sample_bilinear(img.rgba[c], src.x(), src.y());
        if (with_mask) result.image.mask(y, x) = sample_bilinear(img.mask, src.x(), src.y());
      } else {
        for (int c = 0; c < 3; ++c) result.image.rgba[c](y, x) = spec.pad_color[c];
        result.image.rgba[3](y, x) = 0.0f;
        if (with_mask) result.image.mask(y, x) = 0.0f;
      }
    }
  }
  return result;
}

}  // namespace unportrait
