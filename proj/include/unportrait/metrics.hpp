#pragma once

#include "unportrait/camera.hpp"
#include "unportrait/classifier.hpp"
#include "unportrait/image.hpp"

#include <functional>
#include <string>
#include <vector>

namespace unportrait {

// 256-bin CDF remap. The plane overload treats values as intensities in [0,1];
// the image overload equalizes luminance (Rec.601) and rescales the channels
// by the luminance ratio so chroma is preserved. Constant inputs come back
// unchanged.
Plane histogram_equalize(const Plane& p);
ImageBuffer histogram_equalize(const ImageBuffer& img);

struct ErrorReport {
  Plane error_map;        // per-pixel mean absolute channel difference, 0-255 scale
  double mean = 0.0;      // average of error_map over the mask
  long pixel_count = 0;   // mask cardinality
};

// Intensity error between two images on the 0-255 scale, averaged over mask
// entries > 0.5. Both images pass through histogram_equalize first unless
// equalize is false (the triangle-inequality property only holds raw).
// Throws std::invalid_argument on dimension mismatch or an empty mask.
ErrorReport mean_intensity_error(const ImageBuffer& a, const ImageBuffer& b, const Plane& mask,
                                 bool equalize = true);

struct NamedLandmark {
  std::string name;
  Eigen::Vector2d px = Eigen::Vector2d::Zero();
};

// Normalized mean error: mean Euclidean landmark distance divided by the
// inter-ocular length. Landmarks are matched by name; the two sets must carry
// exactly the same names. Throws std::invalid_argument on a missing landmark
// or a non-positive normalizer.
double nme(const std::vector<NamedLandmark>& pred, const std::vector<NamedLandmark>& gt,
           double inter_ocular_px);

struct DistanceStats {
  double mean_rel_err = 0.0;
  double std_rel_err = 0.0;       // population standard deviation
  double label_accuracy = 0.0;    // bin labels match exactly
  double one_step_accuracy = 0.0; // bin labels within one step
};

// Relative error |pred - truth| / truth plus interval-label accuracies.
// Lists must be equally sized, non-empty, with positive distances.
DistanceStats distance_stats(const std::vector<double>& pred_cm,
                             const std::vector<double>& truth_cm);

// Fraction of adjacent query pairs, across all images, where the probe
// response is non-decreasing in the query. The grid must be strictly
// ascending with at least 8 points inside the valid query range.
double transitivity_rate_fn(const std::function<double(const ImageBuffer&, double)>& probe_fn,
                            const std::vector<ImageBuffer>& images,
                            const std::vector<double>& query_grid);
double transitivity_rate(const ClassifierModel& model, const std::vector<ImageBuffer>& images,
                         const std::vector<double>& query_grid);

}  // namespace unportrait
