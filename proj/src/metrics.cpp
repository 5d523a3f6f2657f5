#include "unportrait/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace unportrait {

namespace {

int intensity_bin(float v) {
  return std::clamp(int(std::lround(double(v) * 255.0)), 0, 255);
}

// 256-bin equalization lookup table; empty when the input is constant.
std::array<float, 256> equalize_lut(const Plane& p, bool* constant) {
  std::array<long, 256> hist{};
  for (Eigen::Index i = 0; i < p.size(); ++i) ++hist[intensity_bin(p.data()[i])];

  const long total = long(p.size());
  long cdf_min = 0;
  for (long c : hist)
    if (c > 0) {
      cdf_min = c;
      break;
    }
  // cdf_min only ever equals the full count when one bin holds every pixel.
  std::array<float, 256> lut{};
  if (cdf_min == total) {
    *constant = true;
    return lut;
  }
  *constant = false;
  long cdf = 0;
  for (int k = 0; k < 256; ++k) {
    cdf += hist[k];
    const double level = std::round(255.0 * double(cdf - cdf_min) / double(total - cdf_min));
    lut[k] = float(level / 255.0);
  }
  return lut;
}

}  // namespace

Plane histogram_equalize(const Plane& p) {
  if (p.size() == 0) throw std::invalid_argument("histogram_equalize: empty plane");
  bool constant = false;
  const std::array<float, 256> lut = equalize_lut(p, &constant);
  if (constant) return p;
  Plane out(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.size(); ++i) out.data()[i] = lut[intensity_bin(p.data()[i])];
  return out;
}

ImageBuffer histogram_equalize(const ImageBuffer& img) {
  Plane luma = 0.299f * img.rgba[0] + 0.587f * img.rgba[1] + 0.114f * img.rgba[2];
  bool constant = false;
  const std::array<float, 256> lut = equalize_lut(luma, &constant);
  if (constant) return img;

  ImageBuffer out = img;
  for (Eigen::Index i = 0; i < luma.size(); ++i) {
    const float y = luma.data()[i];
    const float ye = lut[intensity_bin(y)];
    if (y > 1e-6f) {
      const float ratio = ye / y;
      for (int c = 0; c < 3; ++c)
        out.rgba[c].data()[i] = std::clamp(img.rgba[c].data()[i] * ratio, 0.0f, 1.0f);
    } else {
      for (int c = 0; c < 3; ++c) out.rgba[c].data()[i] = ye;
    }
  }
  return out;
}

ErrorReport mean_intensity_error(const ImageBuffer& a, const ImageBuffer& b, const Plane& mask,
                                 bool equalize) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("mean_intensity_error: image dimensions differ");
  if (mask.rows() != a.height || mask.cols() != a.width)
    throw std::invalid_argument("mean_intensity_error: mask dimensions differ");

  const ImageBuffer ae = equalize ? histogram_equalize(a) : a;
  const ImageBuffer be = equalize ? histogram_equalize(b) : b;

  ErrorReport report;
  report.error_map = Plane::Zero(a.height, a.width);
  for (int c = 0; c < 3; ++c)
    report.error_map += (ae.rgba[c] - be.rgba[c]).abs() * (255.0f / 3.0f);

  double sum = 0.0;
  long count = 0;
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    if (mask.data()[i] > 0.5f) {
      sum += double(report.error_map.data()[i]);
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("mean_intensity_error: empty mask");
  report.mean = sum / double(count);
  report.pixel_count = count;
  return report;
}

double nme(const std::vector<NamedLandmark>& pred, const std::vector<NamedLandmark>& gt,
           double inter_ocular_px) {
  if (!(inter_ocular_px > 0.0))
    throw std::invalid_argument("nme: normalizer must be positive");
  if (gt.empty()) throw std::invalid_argument("nme: empty landmark set");
  if (pred.size() != gt.size())
    throw std::invalid_argument("nme: landmark sets carry different names");

  double sum = 0.0;
  for (const NamedLandmark& g : gt) {
    const NamedLandmark* match = nullptr;
    for (const NamedLandmark& p : pred) {
      if (p.name == g.name) {
        match = &p;
        break;
      }
    }
    if (!match) throw std::invalid_argument("nme: missing landmark " + g.name);
    sum += (match->px - g.px).norm();
  }
  return sum / (double(gt.size()) * inter_ocular_px);
}

DistanceStats distance_stats(const std::vector<double>& pred_cm,
                             const std::vector<double>& truth_cm) {
  if (pred_cm.size() != truth_cm.size())
    throw std::invalid_argument("distance_stats: list lengths differ");
  const int n = int(pred_cm.size());
  if (n == 0) throw std::invalid_argument("distance_stats: empty lists");

  double sum = 0.0, sum2 = 0.0;
  int exact = 0, one_step = 0;
  for (int i = 0; i < n; ++i) {
    if (!(truth_cm[i] > 0.0))
      throw std::invalid_argument("distance_stats: non-positive truth distance");
    const double rel = std::abs(pred_cm[i] - truth_cm[i]) / truth_cm[i];
    sum += rel;
    sum2 += rel * rel;
    const int lp = bin_label(pred_cm[i]).index;
    const int lt = bin_label(truth_cm[i]).index;
    if (lp == lt) ++exact;
    if (std::abs(lp - lt) <= 1) ++one_step;
  }

  DistanceStats stats;
  stats.mean_rel_err = sum / n;
  stats.std_rel_err = std::sqrt(std::max(0.0, sum2 / n - stats.mean_rel_err * stats.mean_rel_err));
  stats.label_accuracy = double(exact) / n;
  stats.one_step_accuracy = double(one_step) / n;
  return stats;
}

double transitivity_rate_fn(const std::function<double(const ImageBuffer&, double)>& probe_fn,
                            const std::vector<ImageBuffer>& images,
                            const std::vector<double>& query_grid) {
  if (images.empty()) throw std::invalid_argument("transitivity_rate: no images");
  if (query_grid.size() < 8)
    throw std::invalid_argument("transitivity_rate: grid needs at least 8 queries");
  for (size_t i = 0; i < query_grid.size(); ++i) {
    if (query_grid[i] < kQueryMinCm || query_grid[i] > kQueryMaxCm)
      throw std::invalid_argument("transitivity_rate: query outside the valid range");
    if (i > 0 && query_grid[i] <= query_grid[i - 1])
      throw std::invalid_argument("transitivity_rate: grid must be strictly ascending");
  }

  long ok = 0, pairs = 0;
  for (const ImageBuffer& img : images) {
    double prev = probe_fn(img, query_grid[0]);
    for (size_t i = 1; i < query_grid.size(); ++i) {
      const double cur = probe_fn(img, query_grid[i]);
      if (cur >= prev) ++ok;
      ++pairs;
      prev = cur;
    }
  }
  return double(ok) / double(pairs);
}

double transitivity_rate(const ClassifierModel& model, const std::vector<ImageBuffer>& images,
                         const std::vector<double>& query_grid) {
  return transitivity_rate_fn(
      [&model](const ImageBuffer& img, double q) { return probe(model, img, q); }, images,
      query_grid);
}

}  // namespace unportrait
