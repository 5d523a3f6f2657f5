#pragma once

#include "unportrait/camera.hpp"
#include "unportrait/image.hpp"
#include "unportrait/nn.hpp"

#include <functional>

namespace unportrait {

// Query-probe distance model. Input is the portrait (RGB + coverage mask)
// plus one constant channel carrying the query distance in log2; the single
// output logit, through a sigmoid, estimates P(query >= true distance).
// Convolutional trunk with stride-2 downsampling, no normalization layers: a
// constant conditioning channel must survive to the head, and per-channel
// standardization would erase it.
class ClassifierModel {
 public:
  explicit ClassifierModel(int image_size = 64);

  void init(uint64_t seed);
  std::vector<ParamRef> params();

  int image_size() const { return size_; }

  // 5-channel stack: RGB, mask (ones when absent), log2(query/48).
  Tensor make_input(const ImageBuffer& img, double query_cm) const;

  double logit(const Tensor& input, bool keep = false) const;
  void backward(double glogit);

 private:
  int size_;
  Conv2d c1_, c2_, c3_, c4_, c5_;
  Linear f1_, f2_;
  // one activation instance per site: each caches its own backward state
  LeakyReLU a1_, a2_, a3_, a4_, a5_, a6_;
};

// Model response for one query. Throws std::domain_error for queries outside
// [17.4, 130] and std::invalid_argument on resolution mismatch.
double probe(const ClassifierModel& model, const ImageBuffer& image, double query_cm);

struct DistanceEstimate {
  double distance_cm = 0.0;
  bool below_range = false;   // response already above 0.5 at the low end
  bool above_range = false;   // response still below 0.5 at the high end
  bool non_monotone = false;  // grid response decreased somewhere; first crossing used
  int probe_calls = 0;
  double response = 0.0;  // p at the returned distance
};

// 0.5-crossing search over log2 distance: 32-interval scan for the first
// bracket, then bisection to |p - 0.5| <= 1e-3 or 40 iterations.
DistanceEstimate estimate_distance_fn(const std::function<double(double)>& probe_fn);
DistanceEstimate estimate_distance(const ClassifierModel& model, const ImageBuffer& image);

// Delegates to bin_label on the estimate.
DistanceLabel label_from_estimate(double distance_cm);

struct LabeledImage {
  ImageBuffer image;
  double distance_cm = 0.0;
};

struct ClassifierTrainConfig {
  int image_size = 64;
  int epochs = 10;
  uint64_t seed = 1;
  double lr = 2e-4;
  double query_sigma = 0.5;  // log2 spread of query draws around the true distance

  void validate() const;
};

// Per-sample Adam on binary cross-entropy against 1[query >= true distance],
// queries drawn around each sample's true distance. Deterministic given the
// seed. epoch_loss, when given, receives the mean loss of each epoch.
ClassifierModel train_classifier(const std::vector<LabeledImage>& dataset,
                                 const ClassifierTrainConfig& cfg,
                                 std::vector<double>* epoch_loss = nullptr);

}  // namespace unportrait
