#include "unportrait/calibration.hpp"

#include "unportrait/io.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

namespace unportrait {

namespace {

void require_finite(const Eigen::Vector3d& v, const char* what) {
  if (!v.allFinite()) throw std::invalid_argument(std::string("fit_color_matrix: non-finite ") + what);
}

}  // namespace

ColorFit fit_color_matrix(const std::vector<ChartSample>& samples, bool affine) {
  const int n = int(samples.size());
  const int cols = affine ? 4 : 3;
  if (n < cols)
    throw std::invalid_argument("fit_color_matrix: needs at least " + std::to_string(cols) +
                                " patches");

  Eigen::MatrixXd a(n, cols);
  Eigen::MatrixXd b(n, 3);
  for (int i = 0; i < n; ++i) {
    require_finite(samples[i].src, "source patch");
    require_finite(samples[i].ref, "reference patch");
    a.row(i).head<3>() = samples[i].src.transpose();
    if (affine) a(i, 3) = 1.0;
    b.row(i) = samples[i].ref.transpose();
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (qr.rank() < cols)
    throw std::invalid_argument("fit_color_matrix: source patches are rank-deficient");

  // Rows of the correction decouple: solve A * X ~ B with X = [M | b]^T.
  const Eigen::MatrixXd x = qr.solve(b);

  ColorFit fit;
  fit.affine = affine;
  fit.matrix = x.topRows(3).transpose();
  if (affine) fit.offset = x.row(3).transpose();

  double sse = 0.0;
  for (int i = 0; i < n; ++i) sse += (fit.apply(samples[i].src) - samples[i].ref).squaredNorm();
  fit.rms = std::sqrt(sse / double(3 * n));
  return fit;
}

Eigen::Matrix2d SimilarityTransform::rotation() const {
  const double c = std::cos(theta_rad), s = std::sin(theta_rad);
  Eigen::Matrix2d r;
  r << c, -s, s, c;
  return r;
}

Eigen::Vector2d SimilarityTransform::apply(const Eigen::Vector2d& p) const {
  return scale * (rotation() * p) + t;
}

SimilarityTransform SimilarityTransform::inverse() const {
  SimilarityTransform inv;
  inv.scale = 1.0 / scale;
  inv.theta_rad = -theta_rad;
  inv.t = -(inv.scale * (inv.rotation() * t));
  return inv;
}

SimilarityFit fit_similarity(const std::vector<Eigen::Vector2d>& src,
                             const std::vector<Eigen::Vector2d>& dst) {
  if (src.size() != dst.size())
    throw std::invalid_argument("fit_similarity: point counts differ");
  const int n = int(src.size());
  if (n < 2) throw std::invalid_argument("fit_similarity: needs at least 2 point pairs");
  for (int i = 0; i < n; ++i)
    if (!src[i].allFinite() || !dst[i].allFinite())
      throw std::invalid_argument("fit_similarity: non-finite point");

  Eigen::Vector2d ms = Eigen::Vector2d::Zero(), md = Eigen::Vector2d::Zero();
  for (int i = 0; i < n; ++i) {
    ms += src[i];
    md += dst[i];
  }
  ms /= n;
  md /= n;

  double sigma2 = 0.0;
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d xs = src[i] - ms;
    const Eigen::Vector2d xd = dst[i] - md;
    sigma2 += xs.squaredNorm();
    cov += xd * xs.transpose();
  }
  sigma2 /= n;
  cov /= n;
  if (sigma2 < 1e-18) throw std::invalid_argument("fit_similarity: source points coincide");

  // Proper-rotation least squares: SVD of the cross covariance with the
  // determinant sign folded into the smaller singular value.
  Eigen::JacobiSVD<Eigen::Matrix2d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix2d u = svd.matrixU();
  const Eigen::Matrix2d v = svd.matrixV();
  const Eigen::Vector2d d = svd.singularValues();
  const double sgn = (u.determinant() * v.determinant() < 0.0) ? -1.0 : 1.0;
  const Eigen::Matrix2d r = u * Eigen::Vector2d(1.0, sgn).asDiagonal() * v.transpose();

  SimilarityFit fit;
  fit.transform.scale = (d(0) + sgn * d(1)) / sigma2;
  if (!(fit.transform.scale > 0.0) || !std::isfinite(fit.transform.scale))
    throw std::invalid_argument("fit_similarity: optimal scale collapses to zero");
  fit.transform.theta_rad = std::atan2(r(1, 0), r(0, 0));
  fit.transform.t = md - fit.transform.scale * (r * ms);

  double sse = 0.0;
  for (int i = 0; i < n; ++i) sse += (fit.transform.apply(src[i]) - dst[i]).squaredNorm();
  fit.rms = std::sqrt(sse / double(n));
  return fit;
}

void write_chart_samples(const std::filesystem::path& path, const std::vector<ChartSample>& samples) {
  KeyValueFile file;
  file.kind = "chart-samples";
  for (const ChartSample& s : samples) {
    Record r;
    r.set_double("sr", s.src.x());
    r.set_double("sg", s.src.y());
    r.set_double("sb", s.src.z());
    r.set_double("rr", s.ref.x());
    r.set_double("rg", s.ref.y());
    r.set_double("rb", s.ref.z());
    file.records.push_back(std::move(r));
  }
  write_keyvalue(path, file);
}

std::vector<ChartSample> read_chart_samples(const std::filesystem::path& path) {
  const KeyValueFile file = read_keyvalue(path, "chart-samples");
  std::vector<ChartSample> out;
  out.reserve(file.records.size());
  for (const Record& r : file.records) {
    ChartSample s;
    s.src = {r.get_double("sr"), r.get_double("sg"), r.get_double("sb")};
    s.ref = {r.get_double("rr"), r.get_double("rg"), r.get_double("rb")};
    out.push_back(s);
  }
  return out;
}

void write_point_pairs(const std::filesystem::path& path, const PointPairs& pairs) {
  if (pairs.src.size() != pairs.dst.size())
    throw std::invalid_argument("write_point_pairs: point counts differ");
  KeyValueFile file;
  file.kind = "point-pairs";
  for (size_t i = 0; i < pairs.src.size(); ++i) {
    Record r;
    r.set_double("sx", pairs.src[i].x());
    r.set_double("sy", pairs.src[i].y());
    r.set_double("dx", pairs.dst[i].x());
    r.set_double("dy", pairs.dst[i].y());
    file.records.push_back(std::move(r));
  }
  write_keyvalue(path, file);
}

PointPairs read_point_pairs(const std::filesystem::path& path) {
  const KeyValueFile file = read_keyvalue(path, "point-pairs");
  PointPairs out;
  out.src.reserve(file.records.size());
  out.dst.reserve(file.records.size());
  for (const Record& r : file.records) {
    out.src.emplace_back(r.get_double("sx"), r.get_double("sy"));
    out.dst.emplace_back(r.get_double("dx"), r.get_double("dy"));
  }
  return out;
}

void write_calibration_report(const std::filesystem::path& path, const ColorFit* color,
                              const SimilarityFit* align) {
  KeyValueFile file;
  file.kind = "calibration-report";
  if (color) {
    Record r;
    r.set("item", "color_matrix");
    r.set_long("affine", color->affine ? 1 : 0);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        r.set_double("m" + std::to_string(i) + std::to_string(j), color->matrix(i, j));
    for (int i = 0; i < 3; ++i) r.set_double("b" + std::to_string(i), color->offset(i));
    r.set_double("rms", color->rms);
    file.records.push_back(std::move(r));
  }
  if (align) {
    Record r;
    r.set("item", "similarity");
    r.set_double("scale", align->transform.scale);
    r.set_double("theta_rad", align->transform.theta_rad);
    r.set_double("tx", align->transform.t.x());
    r.set_double("ty", align->transform.t.y());
    r.set_double("rms", align->rms);
    file.records.push_back(std::move(r));
  }
  write_keyvalue(path, file);
}

}  // namespace unportrait
