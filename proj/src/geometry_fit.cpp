#include "unportrait/geometry_fit.hpp"

namespace unportrait {

int GeomLandmarkSet::visible_count() const {
  int n = 0;
  for (const uint8_t v : visible) n += v != 0;
  return n;
}

void GeomLandmarkSet::validate() const {
  if (observed_px.size() != reference_cm.size() || observed_px.size() != visible.size())
    throw std::invalid_argument("GeomLandmarkSet: mismatched array lengths");
  if (visible_count() < 4)
    throw std::invalid_argument("GeomLandmarkSet: need at least 4 visible landmarks");
}

namespace {

// Mean squared reprojection error at distance d. Points landing behind the
// camera push the fit away with a large finite penalty.
double mse_at(const GeomLandmarkSet& lms, const CameraConfig& cam, const Eigen::Matrix3d& rot,
              double d, FocalMode mode) {
  CameraConfig c = cam;
  if (mode == FocalMode::kFramingCoupled) c.focal_mm = focal_for_distance(d);
  double acc = 0.0;
  int n = 0;
  for (size_t i = 0; i < lms.observed_px.size(); ++i) {
    if (!lms.visible[i]) continue;
    const Eigen::Vector3d p = rot * lms.reference_cm[i] + Eigen::Vector3d(0.0, 0.0, d);
    if (p.z() <= 0.0) return 1e12;
    acc += (project(p, c) - lms.observed_px[i]).squaredNorm();
    ++n;
  }
  return acc / double(n);
}

}  // namespace

GeomFitResult fit_distance_geometric(const GeomLandmarkSet& lms, const CameraConfig& cam,
                                     const Pose& pose, FocalMode mode) {
  lms.validate();
  cam.validate();
  const Eigen::Matrix3d rot = pose.rotation();
  auto objective = [&](double t) { return mse_at(lms, cam, rot, std::exp2(t), mode); };

  // Search domain comfortably wider than any shot this artifact produces.
  const double tlo = std::log2(8.0);
  const double thi = std::log2(500.0);
  constexpr int kCoarse = 96;

  int best = 0;
  double best_val = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= kCoarse; ++i) {
    const double val = objective(tlo + (thi - tlo) * double(i) / kCoarse);
    if (val < best_val) {
      best_val = val;
      best = i;
    }
  }
  double a = tlo + (thi - tlo) * double(std::max(0, best - 1)) / kCoarse;
  double b = tlo + (thi - tlo) * double(std::min(kCoarse, best + 1)) / kCoarse;

  // Golden-section on the bracketing interval; unimodal there since the
  // coarse minimum is interior (or pinned at a domain edge).
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - gr * (b - a);
  double x2 = a + gr * (b - a);
  double f1 = objective(x1);
  double f2 = objective(x2);
  for (int it = 0; it < 80 && (b - a) > 1e-12; ++it) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - gr * (b - a);
      f1 = objective(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + gr * (b - a);
      f2 = objective(x2);
    }
  }
  const double t = 0.5 * (a + b);
  GeomFitResult out;
  out.distance_cm = std::exp2(t);
  out.rms_px = std::sqrt(objective(t));
  return out;
}

}  // namespace unportrait
