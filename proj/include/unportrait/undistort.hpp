#pragma once

#include "unportrait/classifier.hpp"
#include "unportrait/flow.hpp"
#include "unportrait/image.hpp"
#include "unportrait/io.hpp"
#include "unportrait/nn.hpp"

#include <filesystem>

namespace unportrait {

// 8 constant planes, one-hot on the distance label.
Tensor label_planes(int label, int h, int w);

struct UNetConfig {
  int in_channels = 12;
  int out_channels = 2;
  int levels = 4;          // resolutions touched, >= 2
  int base_channels = 16;  // doubled per level, capped at 128

  void validate() const;
};

// Encoder-decoder with skip connections. First encoder block carries no
// normalization so constant conditioning planes reach the nonlinearity
// unscathed; instance norm after a conv would cancel a uniform shift exactly.
// Decoder steps: nearest upsample, concat the skip, fuse conv. Inputs must be
// divisible by 2^(levels-1) per side.
class UNet {
 public:
  explicit UNet(const UNetConfig& cfg);

  void init(uint64_t seed);
  std::vector<ParamRef> params();
  const UNetConfig& config() const { return cfg_; }

  Tensor forward(const Tensor& x, bool keep = false) const;
  Tensor backward(const Tensor& gy);

 private:
  UNetConfig cfg_;
  std::vector<int> ch_;  // encoder channel widths per level
  std::vector<Conv2d> enc_;
  std::vector<InstanceNorm> enc_norm_;  // for enc_[1..]
  std::vector<LeakyReLU> enc_act_;
  std::vector<Conv2d> dec_;  // dec_[i] fuses toward level i
  std::vector<InstanceNorm> dec_norm_;
  std::vector<LeakyReLU> dec_act_;
  Conv2d head_;
};

// Corrective flow predictor. Input stack: RGB + coverage mask + label planes.
class FlowNetModel {
 public:
  explicit FlowNetModel(int image_size = 64, int levels = 4, int base_channels = 16);

  void init(uint64_t seed);
  std::vector<ParamRef> params();
  int image_size() const { return size_; }

  Tensor input_stack(const ImageBuffer& image, int label) const;
  // Dense flow at the model resolution; validity mirrors the input mask.
  FlowMap predict_flow(const ImageBuffer& image, int label) const;

  UNet net;  // exposed for the training loop

 private:
  int size_;
};

// Hole filler / re-shader. Input stack: warped RGB + hit mask + label planes.
// The network output is a residual over the warped image.
class CompletionModel {
 public:
  explicit CompletionModel(int image_size = 64, int levels = 4, int base_channels = 16);

  void init(uint64_t seed);
  std::vector<ParamRef> params();
  int image_size() const { return size_; }

  Tensor input_stack(const ImageBuffer& warped, const Plane& hit, int label) const;
  // warped + residual, clamped to [0,1]; mask passes through.
  ImageBuffer complete(const ImageBuffer& warped, const Plane& hit, int label) const;

  UNet net;

 private:
  int size_;
};

// Conditional pair critic: four stride-2 convolutions and one fully connected
// layer to a scalar logit. Stack: reference image + candidate + label planes.
// No normalization layers; at tiny inputs the late stages run at 1x1 spatial
// extent, where instance norm would zero every upstream gradient.
class Discriminator {
 public:
  explicit Discriminator(int image_size = 64);

  void init(uint64_t seed);
  std::vector<ParamRef> params();
  int image_size() const { return size_; }

  Tensor make_stack(const Tensor& a, const Tensor& a_prime, int label) const;
  double logit(const Tensor& stack, bool keep = false) const;
  Tensor backward(double glogit);

 private:
  int size_;
  Conv2d c1_, c2_, c3_, c4_;
  LeakyReLU a1_, a2_, a3_, a4_;
  Linear fc_;
};

// Mean absolute flow difference over mask > 0.5 pixels, both components.
// grad, when given, receives dL/dpred in its dx/dy planes (validity untouched).
// Throws on dimension mismatch or an empty mask.
double loss_flow(const FlowMap& pred, const FlowMap& gt, const Plane& mask, FlowMap* grad = nullptr);

// Weighted L1 over the region: pixels the warp never hit (the novel region)
// weigh novel_weight against rest_weight elsewhere, normalized by the total
// weight so an empty novel region reduces to plain masked L1. Per-pixel
// channel means. pred/target are 3-channel tensors. Throws when the region is
// empty or carries zero total weight.
double loss_completion(const Tensor& pred, const Tensor& target, const Plane& hit_mask,
                       const Plane& region_mask, double novel_weight = 5.0,
                       double rest_weight = 1.0, Tensor* grad = nullptr);

struct AdvLosses {
  double d_loss = 0.0;
  double g_loss = 0.0;
};

// Conditional GAN losses. A perfectly corrected image re-projected into the
// source view reproduces the source, so the real stack is (a, a) and the fake
// stack (a, a_prime). d_loss sums both cross-entropy terms; g_loss is the
// non-saturating generator term on the fake stack. accumulate_d_grads adds the
// d_loss parameter gradients; g_a_prime receives dg_loss/da_prime.
AdvLosses loss_adversarial(Discriminator& disc, const Tensor& a, const Tensor& a_prime, int label,
                           Tensor* g_a_prime = nullptr, bool accumulate_d_grads = false);

struct TrainConfig {
  double l1_weight = 10.0;
  double gan_weight = 1.0;
  double lr = 2e-4;
  double novel_weight = 5.0;  // completion inside:outside ratio
  int epochs = 10;
  uint64_t seed = 1;
  bool adversarial = false;
  int image_size = 64;
  int levels = 4;
  int base_channels = 16;

  void validate() const;
};

struct FlowSample {
  ImageBuffer image;  // near view at training resolution, mask required
  FlowMap gt;
  int label = 0;
};

struct CompletionSample {
  ImageBuffer warped;  // ground-truth-flow warp of the near view, filled
  Plane hit;
  ImageBuffer target;  // far view
  Plane region;        // evaluation region (far-view coverage)
  int label = 0;
};

// Per-sample Adam over l1_weight * flow L1 (+ gan_weight * adversarial when
// enabled). Deterministic per seed. checkpoint_dir, when given, receives
// flownet_epoch_<k>.updm after each epoch.
FlowNetModel train_flownet(const std::vector<FlowSample>& dataset, const TrainConfig& cfg,
                           std::vector<double>* epoch_loss = nullptr,
                           const std::filesystem::path* checkpoint_dir = nullptr);

// L1-only training of the completion stage on ground-truth warps.
CompletionModel train_completion(const std::vector<CompletionSample>& dataset,
                                 const TrainConfig& cfg, std::vector<double>* epoch_loss = nullptr,
                                 const std::filesystem::path* checkpoint_dir = nullptr);

struct UndistortModels {
  const ClassifierModel* classifier = nullptr;
  const FlowNetModel* flownet = nullptr;
  const CompletionModel* completion = nullptr;
};

struct UndistortResult {
  double distance_cm = 0.0;
  DistanceLabel label;
  DistanceEstimate estimate;
  FlowMap flow;           // at the input resolution
  ImageBuffer warped;     // forward warp, holes filled
  ImageBuffer completed;  // completion output resampled to the input size
  ImageBuffer blended;    // final composite; mask = evaluation region
};

// Full correction pass at the input's own resolution: distance estimate ->
// label -> flow (model resolution, rescaled up) -> forward warp + fill ->
// completion -> multiscale blend of completion into the filled warp over the
// unhit region. oracle_flow, when given, replaces the predicted flow (must
// match the input size). known_distance_cm skips the classifier stage.
// region_mask, when given, bounds fill and blend in target geometry; the
// default is the dilated hull of warp hits. Stage failures rethrow as
// std::runtime_error prefixed with the stage name.
UndistortResult undistort(const ImageBuffer& image, const UndistortModels& models,
                          const FlowMap* oracle_flow = nullptr,
                          const double* known_distance_cm = nullptr,
                          const Plane* region_mask = nullptr);

// Training-set assembly from a generated dataset manifest: near images and
// ground-truth flow resampled to the given square size. Rows whose status is
// not "ok" are skipped. Completion samples warp by the resampled flow.
std::vector<FlowSample> load_flow_samples(const KeyValueFile& manifest,
                                          const std::filesystem::path& dir, int size);
std::vector<CompletionSample> make_completion_samples(const KeyValueFile& manifest,
                                                      const std::filesystem::path& dir, int size);

}  // namespace unportrait
