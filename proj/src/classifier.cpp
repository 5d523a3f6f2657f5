#include "unportrait/classifier.hpp"

#include <numeric>

namespace unportrait {

namespace {

int fc_input_size(int image_size) {
  if (image_size < 32 || image_size % 16 != 0)
    throw std::invalid_argument("ClassifierModel: image size must be a multiple of 16, at least 32");
  const int s = image_size / 16;
  return 64 * s * s;
}

}  // namespace

ClassifierModel::ClassifierModel(int image_size)
    : size_(image_size),
      c1_(5, 16, 3, 1, 1),
      c2_(16, 32, 3, 2, 1),
      c3_(32, 48, 3, 2, 1),
      c4_(48, 64, 3, 2, 1),
      c5_(64, 64, 3, 2, 1),
      f1_(fc_input_size(image_size), 128),
      f2_(128, 1),
      a1_(0.2f),
      a2_(0.2f),
      a3_(0.2f),
      a4_(0.2f),
      a5_(0.2f),
      a6_(0.2f) {}

void ClassifierModel::init(uint64_t seed) {
  Rng rng(seed);
  c1_.init(rng);
  c2_.init(rng);
  c3_.init(rng);
  c4_.init(rng);
  c5_.init(rng);
  f1_.init(rng);
  f2_.init(rng);
}

std::vector<ParamRef> ClassifierModel::params() {
  std::vector<ParamRef> out;
  c1_.collect(out);
  c2_.collect(out);
  c3_.collect(out);
  c4_.collect(out);
  c5_.collect(out);
  f1_.collect(out);
  f2_.collect(out);
  return out;
}

Tensor ClassifierModel::make_input(const ImageBuffer& img, double query_cm) const {
  if (img.width != size_ || img.height != size_)
    throw std::invalid_argument("classifier: image resolution does not match the model");
  if (!(query_cm > 0.0)) throw std::domain_error("classifier: non-positive query distance");
  Tensor in(5, size_, size_);
  for (int ch = 0; ch < 3; ++ch) in.plane(ch) = img.rgba[size_t(ch)];
  if (img.has_mask())
    in.plane(3) = img.mask;
  else
    in.plane(3).setConstant(1.0f);
  // centered near the geometric middle of the query range so the constant
  // channel stays O(1)
  in.plane(4).setConstant(float(std::log2(query_cm / 48.0)));
  return in;
}

double ClassifierModel::logit(const Tensor& input, bool keep) const {
  Tensor t = a1_.forward(c1_.forward(input, keep), keep);
  t = a2_.forward(c2_.forward(t, keep), keep);
  t = a3_.forward(c3_.forward(t, keep), keep);
  t = a4_.forward(c4_.forward(t, keep), keep);
  t = a5_.forward(c5_.forward(t, keep), keep);
  Eigen::VectorXf u = a6_.forward(f1_.forward(t.v, keep), keep);
  return double(f2_.forward(u, keep)[0]);
}

void ClassifierModel::backward(double glogit) {
  Eigen::VectorXf g(1);
  g[0] = float(glogit);
  Eigen::VectorXf gu = f1_.backward(a6_.backward(f2_.backward(g)));
  const int s = size_ / 16;
  Tensor gt(64, s, s);
  gt.v = gu;
  gt = c5_.backward(a5_.backward(gt));
  gt = c4_.backward(a4_.backward(gt));
  gt = c3_.backward(a3_.backward(gt));
  gt = c2_.backward(a2_.backward(gt));
  c1_.backward(a1_.backward(gt));
}

double probe(const ClassifierModel& model, const ImageBuffer& image, double query_cm) {
  if (!(query_cm >= kQueryMinCm && query_cm <= kQueryMaxCm))
    throw std::domain_error("probe: query distance outside the valid range");
  return sigmoid(model.logit(model.make_input(image, query_cm)));
}

DistanceEstimate estimate_distance_fn(const std::function<double(double)>& probe_fn) {
  DistanceEstimate est;
  const double tlo = std::log2(kQueryMinCm);
  const double thi = std::log2(kQueryMaxCm);
  auto eval = [&](double t) {
    ++est.probe_calls;
    return probe_fn(std::exp2(t));
  };
  const double plo = eval(tlo);
  if (plo > 0.5) {
    est.distance_cm = kQueryMinCm;
    est.below_range = true;
    est.response = plo;
    return est;
  }
  const double phi = eval(thi);
  if (phi < 0.5) {
    est.distance_cm = kQueryMaxCm;
    est.above_range = true;
    est.response = phi;
    return est;
  }

  // Scan for the first upward 0.5 crossing; keep scanning afterwards so the
  // monotonicity diagnostic covers the whole grid.
  constexpr int kGrid = 32;
  double lo = tlo, hi = thi;
  double prev_t = tlo, prev_p = plo;
  bool found = false;
  for (int i = 1; i <= kGrid; ++i) {
    const double t = tlo + (thi - tlo) * double(i) / kGrid;
    const double p = (i == kGrid) ? phi : eval(t);
    if (p < prev_p) est.non_monotone = true;
    if (!found && prev_p < 0.5 && p >= 0.5) {
      lo = prev_t;
      hi = t;
      found = true;
    }
    prev_t = t;
    prev_p = p;
  }

  double t_mid = 0.5 * (lo + hi);
  double p_mid = eval(t_mid);
  for (int it = 1; it < 40 && std::abs(p_mid - 0.5) > 1e-3; ++it) {
    if (p_mid < 0.5)
      lo = t_mid;
    else
      hi = t_mid;
    t_mid = 0.5 * (lo + hi);
    p_mid = eval(t_mid);
  }
  est.distance_cm = std::exp2(t_mid);
  est.response = p_mid;
  return est;
}

DistanceEstimate estimate_distance(const ClassifierModel& model, const ImageBuffer& image) {
  return estimate_distance_fn([&](double q) { return probe(model, image, q); });
}

DistanceLabel label_from_estimate(double distance_cm) { return bin_label(distance_cm); }

void ClassifierTrainConfig::validate() const {
  if (image_size < 32 || image_size % 16 != 0)
    throw std::invalid_argument("ClassifierTrainConfig: image size must be a multiple of 16, at least 32");
  if (epochs <= 0) throw std::invalid_argument("ClassifierTrainConfig: epochs must be positive");
  if (!(lr > 0.0)) throw std::invalid_argument("ClassifierTrainConfig: learning rate must be positive");
  if (query_sigma < 0.0) throw std::invalid_argument("ClassifierTrainConfig: negative query sigma");
}

ClassifierModel train_classifier(const std::vector<LabeledImage>& dataset,
                                 const ClassifierTrainConfig& cfg, std::vector<double>* epoch_loss) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train_classifier: empty dataset");
  for (const LabeledImage& s : dataset) {
    if (s.image.width != cfg.image_size || s.image.height != cfg.image_size)
      throw std::invalid_argument("train_classifier: sample resolution does not match the config");
    if (!(s.distance_cm > 0.0)) throw std::invalid_argument("train_classifier: non-positive distance");
  }

  ClassifierModel model(cfg.image_size);
  model.init(derive_seed(cfg.seed, 1));
  Rng rng(derive_seed(cfg.seed, 2));
  Adam opt(model.params(), cfg.lr);

  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), size_t(0));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double sum = 0.0;
    for (const size_t idx : order) {
      const LabeledImage& s = dataset[idx];
      const double q = sample_query_logdistance(s.distance_cm, rng, cfg.query_sigma);
      const double target = q >= s.distance_cm ? 1.0 : 0.0;
      const double z = model.logit(model.make_input(s.image, q), true);
      sum += bce_with_logits(z, target);
      opt.zero_grad();
      model.backward(bce_with_logits_grad(z, target));
      opt.step();
    }
    if (epoch_loss) epoch_loss->push_back(sum / double(dataset.size()));
  }
  return model;
}

}  // namespace unportrait
