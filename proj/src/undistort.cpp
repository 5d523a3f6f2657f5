#include "unportrait/undistort.hpp"

#include "unportrait/camera.hpp"
#include "unportrait/pyramid.hpp"
#include "unportrait/warp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace unportrait {

namespace {

constexpr int kLabelCount = int(kDistanceBinEdgesCm.size());

Tensor rgb_tensor(const ImageBuffer& img) {
  Tensor t(3, img.height, img.width);
  for (int c = 0; c < 3; ++c) t.plane(c) = img.rgba[size_t(c)];
  return t;
}

// Conv output extent for k=3, pad=1 at the given stride.
int conv_out(int n, int stride) { return (n + 2 - 3) / stride + 1; }

}  // namespace

Tensor label_planes(int label, int h, int w) {
  if (label < 0 || label >= kLabelCount)
    throw std::invalid_argument("label_planes: label out of range");
  Tensor t(kLabelCount, h, w);
  t.plane(label).setOnes();
  return t;
}

// ---- UNet ---------------------------------------------------------------------

void UNetConfig::validate() const {
  if (in_channels < 1 || out_channels < 1)
    throw std::invalid_argument("UNetConfig: channel counts must be positive");
  if (levels < 2 || levels > 8) throw std::invalid_argument("UNetConfig: levels must be in [2, 8]");
  if (base_channels < 1) throw std::invalid_argument("UNetConfig: base_channels must be positive");
}

UNet::UNet(const UNetConfig& cfg) : cfg_(cfg), head_(1, 1, 1, 1, 0) {
  cfg_.validate();
  const int L = cfg_.levels;
  ch_.resize(size_t(L));
  for (int i = 0; i < L; ++i) ch_[size_t(i)] = std::min(cfg_.base_channels << i, 128);

  enc_.reserve(size_t(L));
  enc_act_.reserve(size_t(L));
  enc_.emplace_back(cfg_.in_channels, ch_[0], 3, 1, 1);
  enc_act_.emplace_back(0.2f);
  for (int i = 1; i < L; ++i) {
    enc_.emplace_back(ch_[size_t(i - 1)], ch_[size_t(i)], 3, 2, 1);
    enc_norm_.emplace_back(ch_[size_t(i)]);
    enc_act_.emplace_back(0.2f);
  }

  // dec_[i] fuses the upsampled level-(i+1) features with the level-i skip.
  dec_.reserve(size_t(L - 1));
  for (int i = 0; i < L - 1; ++i) {
    dec_.emplace_back(ch_[size_t(i + 1)] + ch_[size_t(i)], ch_[size_t(i)], 3, 1, 1);
    dec_norm_.emplace_back(ch_[size_t(i)]);
    dec_act_.emplace_back(0.0f);
  }

  head_ = Conv2d(ch_[0], cfg_.out_channels, 3, 1, 1);
}

void UNet::init(uint64_t seed) {
  Rng rng(seed);
  for (auto& c : enc_) c.init(rng);
  for (auto& c : dec_) c.init(rng);
  head_.init(rng);
  for (auto& n : enc_norm_) {
    n.gamma.setOnes();
    n.beta.setZero();
  }
  for (auto& n : dec_norm_) {
    n.gamma.setOnes();
    n.beta.setZero();
  }
}

std::vector<ParamRef> UNet::params() {
  std::vector<ParamRef> out;
  for (auto& c : enc_) c.collect(out);
  for (auto& n : enc_norm_) n.collect(out);
  for (auto& c : dec_) c.collect(out);
  for (auto& n : dec_norm_) n.collect(out);
  head_.collect(out);
  return out;
}

Tensor UNet::forward(const Tensor& x, bool keep) const {
  const int L = cfg_.levels;
  const int div = 1 << (L - 1);
  if (x.c != cfg_.in_channels) throw std::invalid_argument("UNet: channel count mismatch");
  if (x.h % div != 0 || x.w % div != 0 || x.h < div || x.w < div)
    throw std::invalid_argument("UNet: spatial dims must be positive multiples of " +
                                std::to_string(div));

  std::vector<Tensor> skips(size_t(L - 1));
  Tensor t = enc_act_[0].forward(enc_[0].forward(x, keep), keep);
  if (L > 1) skips[0] = t;
  for (int i = 1; i < L; ++i) {
    t = enc_act_[size_t(i)].forward(
        enc_norm_[size_t(i - 1)].forward(enc_[size_t(i)].forward(t, keep), keep), keep);
    if (i < L - 1) skips[size_t(i)] = t;
  }
  for (int i = L - 2; i >= 0; --i) {
    Tensor cat = concat_channels(upsample2x_nearest(t), skips[size_t(i)]);
    t = dec_act_[size_t(i)].forward(
        dec_norm_[size_t(i)].forward(dec_[size_t(i)].forward(cat, keep), keep), keep);
  }
  return head_.forward(t, keep);
}

Tensor UNet::backward(const Tensor& gy) {
  const int L = cfg_.levels;
  Tensor gt = head_.backward(gy);

  // Decoder ran levels L-2 .. 0, so its backward walks 0 .. L-2 and peels the
  // concat apart: low channels feed the upsample, high channels the skip.
  std::vector<Tensor> gskip(size_t(L - 1));
  for (int i = 0; i <= L - 2; ++i) {
    Tensor g_cat = dec_[size_t(i)].backward(
        dec_norm_[size_t(i)].backward(dec_act_[size_t(i)].backward(gt)));
    gskip[size_t(i)] = take_channels(g_cat, ch_[size_t(i + 1)], ch_[size_t(i)]);
    gt = upsample2x_nearest_backward(take_channels(g_cat, 0, ch_[size_t(i + 1)]));
  }

  // Encoder outputs below the bottleneck fed both the next level and a skip.
  for (int i = L - 1; i >= 1; --i) {
    if (i <= L - 2) gt.v += gskip[size_t(i)].v;
    gt = enc_[size_t(i)].backward(
        enc_norm_[size_t(i - 1)].backward(enc_act_[size_t(i)].backward(gt)));
  }
  gt.v += gskip[0].v;
  return enc_[0].backward(enc_act_[0].backward(gt));
}

// ---- FlowNetModel -------------------------------------------------------------

namespace {

UNetConfig unet_config(int in_c, int out_c, int levels, int base_channels) {
  UNetConfig cfg;
  cfg.in_channels = in_c;
  cfg.out_channels = out_c;
  cfg.levels = levels;
  cfg.base_channels = base_channels;
  return cfg;
}

void check_model_size(const char* who, int size, int levels) {
  const int div = 1 << (levels - 1);
  if (size < 16 || size % div != 0)
    throw std::invalid_argument(std::string(who) + ": image_size must be >= 16 and divisible by " +
                                std::to_string(div));
}

}  // namespace

FlowNetModel::FlowNetModel(int image_size, int levels, int base_channels)
    : net(unet_config(4 + kLabelCount, 2, levels, base_channels)), size_(image_size) {
  check_model_size("FlowNetModel", image_size, levels);
}

void FlowNetModel::init(uint64_t seed) { net.init(seed); }

std::vector<ParamRef> FlowNetModel::params() { return net.params(); }

Tensor FlowNetModel::input_stack(const ImageBuffer& image, int label) const {
  if (image.width != size_ || image.height != size_)
    throw std::invalid_argument("FlowNetModel: image resolution mismatch");
  Tensor t(4 + kLabelCount, size_, size_);
  for (int c = 0; c < 3; ++c) t.plane(c) = image.rgba[size_t(c)];
  if (image.has_mask())
    t.plane(3) = image.mask;
  else
    t.plane(3).setOnes();
  t.plane(4 + label) = label_planes(label, size_, size_).plane(label);
  return t;
}

FlowMap FlowNetModel::predict_flow(const ImageBuffer& image, int label) const {
  const Tensor y = net.forward(input_stack(image, label));
  FlowMap f(size_, size_);
  f.dx = y.plane(0);
  f.dy = y.plane(1);
  if (image.has_mask()) {
    for (int yy = 0; yy < size_; ++yy)
      for (int xx = 0; xx < size_; ++xx)
        f.valid(yy, xx) = image.mask(yy, xx) > 0.5f ? kFlowValid : kFlowInvalid;
  }
  return f;
}

// ---- CompletionModel ----------------------------------------------------------

CompletionModel::CompletionModel(int image_size, int levels, int base_channels)
    : net(unet_config(4 + kLabelCount, 3, levels, base_channels)), size_(image_size) {
  check_model_size("CompletionModel", image_size, levels);
}

void CompletionModel::init(uint64_t seed) { net.init(seed); }

std::vector<ParamRef> CompletionModel::params() { return net.params(); }

Tensor CompletionModel::input_stack(const ImageBuffer& warped, const Plane& hit, int label) const {
  if (warped.width != size_ || warped.height != size_)
    throw std::invalid_argument("CompletionModel: image resolution mismatch");
  if (hit.rows() != size_ || hit.cols() != size_)
    throw std::invalid_argument("CompletionModel: hit mask resolution mismatch");
  Tensor t(4 + kLabelCount, size_, size_);
  for (int c = 0; c < 3; ++c) t.plane(c) = warped.rgba[size_t(c)];
  t.plane(3) = hit;
  t.plane(4 + label) = label_planes(label, size_, size_).plane(label);
  return t;
}

ImageBuffer CompletionModel::complete(const ImageBuffer& warped, const Plane& hit,
                                      int label) const {
  const Tensor res = net.forward(input_stack(warped, hit, label));
  ImageBuffer out = warped;
  for (int c = 0; c < 3; ++c)
    out.rgba[size_t(c)] = (warped.rgba[size_t(c)] + res.plane(c)).cwiseMax(0.0f).cwiseMin(1.0f);
  return out;
}

// ---- Discriminator ------------------------------------------------------------

Discriminator::Discriminator(int image_size)
    : size_(image_size),
      c1_(6 + kLabelCount, 16, 3, 2, 1),
      c2_(16, 32, 3, 2, 1),
      c3_(32, 64, 3, 2, 1),
      c4_(64, 64, 3, 2, 1),
      a1_(0.2f),
      a2_(0.2f),
      a3_(0.2f),
      a4_(0.2f),
      fc_(1, 1) {
  if (image_size < 8 || image_size % 2 != 0)
    throw std::invalid_argument("Discriminator: image_size must be even and >= 8");
  int s = image_size;
  for (int i = 0; i < 4; ++i) s = conv_out(s, 2);
  fc_ = Linear(64 * s * s, 1);
}

void Discriminator::init(uint64_t seed) {
  Rng rng(seed);
  c1_.init(rng);
  c2_.init(rng);
  c3_.init(rng);
  c4_.init(rng);
  fc_.init(rng);
}

std::vector<ParamRef> Discriminator::params() {
  std::vector<ParamRef> out;
  c1_.collect(out);
  c2_.collect(out);
  c3_.collect(out);
  c4_.collect(out);
  fc_.collect(out);
  return out;
}

Tensor Discriminator::make_stack(const Tensor& a, const Tensor& a_prime, int label) const {
  if (a.c != 3 || a_prime.c != 3) throw std::invalid_argument("Discriminator: images must be RGB");
  if (!a.same_shape(a_prime) || a.h != size_ || a.w != size_)
    throw std::invalid_argument("Discriminator: image resolution mismatch");
  return concat_channels(concat_channels(a, a_prime), label_planes(label, size_, size_));
}

double Discriminator::logit(const Tensor& stack, bool keep) const {
  Tensor t = a1_.forward(c1_.forward(stack, keep), keep);
  t = a2_.forward(c2_.forward(t, keep), keep);
  t = a3_.forward(c3_.forward(t, keep), keep);
  t = a4_.forward(c4_.forward(t, keep), keep);
  return double(fc_.forward(t.v, keep)[0]);
}

Tensor Discriminator::backward(double glogit) {
  Eigen::VectorXf g1(1);
  g1[0] = float(glogit);
  const Eigen::VectorXf gflat = fc_.backward(g1);

  int s = size_;
  for (int i = 0; i < 4; ++i) s = conv_out(s, 2);
  Tensor gt(64, s, s);
  gt.v = gflat;
  gt = c4_.backward(a4_.backward(gt));
  gt = c3_.backward(a3_.backward(gt));
  gt = c2_.backward(a2_.backward(gt));
  return c1_.backward(a1_.backward(gt));
}

// ---- losses -------------------------------------------------------------------

double loss_flow(const FlowMap& pred, const FlowMap& gt, const Plane& mask, FlowMap* grad) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw std::invalid_argument("loss_flow: flow dimensions must match");
  if (mask.rows() != pred.height || mask.cols() != pred.width)
    throw std::invalid_argument("loss_flow: mask dimensions must match");

  if (grad) {
    grad->reset(pred.width, pred.height);
    grad->valid = pred.valid;
  }

  long n = 0;
  double sum = 0.0;
  for (int y = 0; y < pred.height; ++y) {
    for (int x = 0; x < pred.width; ++x) {
      if (mask(y, x) <= 0.5f) continue;
      ++n;
      sum += std::abs(double(pred.dx(y, x)) - gt.dx(y, x));
      sum += std::abs(double(pred.dy(y, x)) - gt.dy(y, x));
    }
  }
  if (n == 0) throw std::invalid_argument("loss_flow: empty mask");

  const double scale = 1.0 / (2.0 * double(n));
  if (grad) {
    for (int y = 0; y < pred.height; ++y) {
      for (int x = 0; x < pred.width; ++x) {
        if (mask(y, x) <= 0.5f) continue;
        const double ex = double(pred.dx(y, x)) - gt.dx(y, x);
        const double ey = double(pred.dy(y, x)) - gt.dy(y, x);
        grad->dx(y, x) = float((ex > 0.0 ? 1.0 : ex < 0.0 ? -1.0 : 0.0) * scale);
        grad->dy(y, x) = float((ey > 0.0 ? 1.0 : ey < 0.0 ? -1.0 : 0.0) * scale);
      }
    }
  }
  return sum * scale;
}

double loss_completion(const Tensor& pred, const Tensor& target, const Plane& hit_mask,
                       const Plane& region_mask, double novel_weight, double rest_weight,
                       Tensor* grad) {
  if (!pred.same_shape(target)) throw std::invalid_argument("loss_completion: shape mismatch");
  if (pred.c != 3) throw std::invalid_argument("loss_completion: tensors must be 3-channel");
  if (hit_mask.rows() != pred.h || hit_mask.cols() != pred.w || region_mask.rows() != pred.h ||
      region_mask.cols() != pred.w)
    throw std::invalid_argument("loss_completion: mask dimensions must match");
  if (novel_weight < 0.0 || rest_weight < 0.0)
    throw std::invalid_argument("loss_completion: negative weight");

  if (grad) {
    grad->reset(3, pred.h, pred.w);
  }

  // Denominator counts pixels by weight so an empty novel region reduces the
  // whole thing to plain masked L1.
  double wsum = 0.0;
  double sum = 0.0;
  for (int y = 0; y < pred.h; ++y) {
    for (int x = 0; x < pred.w; ++x) {
      if (region_mask(y, x) <= 0.5f) continue;
      const bool novel = hit_mask(y, x) <= 0.5f;
      const double wgt = novel ? novel_weight : rest_weight;
      wsum += wgt;
      double e = 0.0;
      for (int c = 0; c < 3; ++c) e += std::abs(double(pred.at(c, y, x)) - target.at(c, y, x));
      sum += wgt * (e / 3.0);
    }
  }
  if (wsum == 0.0) throw std::invalid_argument("loss_completion: empty or zero-weight region");

  if (grad) {
    for (int y = 0; y < pred.h; ++y) {
      for (int x = 0; x < pred.w; ++x) {
        if (region_mask(y, x) <= 0.5f) continue;
        const bool novel = hit_mask(y, x) <= 0.5f;
        const double wgt = novel ? novel_weight : rest_weight;
        for (int c = 0; c < 3; ++c) {
          const double e = double(pred.at(c, y, x)) - target.at(c, y, x);
          const double sgn = e > 0.0 ? 1.0 : e < 0.0 ? -1.0 : 0.0;
          grad->at(c, y, x) = float(wgt * sgn / (3.0 * wsum));
        }
      }
    }
  }
  return sum / wsum;
}

AdvLosses loss_adversarial(Discriminator& disc, const Tensor& a, const Tensor& a_prime, int label,
                           Tensor* g_a_prime, bool accumulate_d_grads) {
  const Tensor real = disc.make_stack(a, a, label);
  const Tensor fake = disc.make_stack(a, a_prime, label);

  AdvLosses out;

  // The two stacks share the layer caches, so each forward's backwards must
  // finish before the next forward overwrites them.
  const bool keep = accumulate_d_grads || g_a_prime != nullptr;
  const double zr = disc.logit(real, keep);
  out.d_loss = bce_with_logits(zr, 1.0);
  if (accumulate_d_grads) disc.backward(bce_with_logits_grad(zr, 1.0));

  const double zf = disc.logit(fake, keep);
  out.d_loss += bce_with_logits(zf, 0.0);
  out.g_loss = bce_with_logits(zf, 1.0);
  if (accumulate_d_grads) disc.backward(bce_with_logits_grad(zf, 0.0));
  if (g_a_prime) {
    // Generator gradient: only the candidate half of the fake stack moves.
    // Backprop writes into the critic's parameter slots as a side effect, so
    // shield whatever d_loss gradients the caller asked for.
    std::vector<std::vector<float>> stash;
    const std::vector<ParamRef> prefs = disc.params();
    stash.reserve(prefs.size());
    for (const ParamRef& p : prefs) stash.emplace_back(p.g, p.g + p.n);
    const Tensor gstack = disc.backward(bce_with_logits_grad(zf, 1.0));
    for (size_t i = 0; i < prefs.size(); ++i)
      std::copy(stash[i].begin(), stash[i].end(), prefs[i].g);
    *g_a_prime = take_channels(gstack, 3, 3);
  }
  return out;
}

// ---- training -----------------------------------------------------------------

void TrainConfig::validate() const {
  if (l1_weight <= 0.0 || gan_weight <= 0.0)
    throw std::invalid_argument("TrainConfig: loss weights must be positive");
  if (lr <= 0.0) throw std::invalid_argument("TrainConfig: lr must be positive");
  if (novel_weight <= 0.0) throw std::invalid_argument("TrainConfig: novel_weight must be positive");
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (image_size < 16) throw std::invalid_argument("TrainConfig: image_size must be >= 16");
  UNetConfig u;
  u.levels = levels;
  u.base_channels = base_channels;
  u.validate();
}

namespace {

void write_epoch_checkpoint(const std::filesystem::path* dir, const char* stem, int epoch,
                            const std::vector<ParamRef>& params) {
  if (!dir) return;
  save_params(*dir / (std::string(stem) + "_epoch_" + std::to_string(epoch) + ".updm"), params);
}

}  // namespace

FlowNetModel train_flownet(const std::vector<FlowSample>& dataset, const TrainConfig& cfg,
                           std::vector<double>* epoch_loss,
                           const std::filesystem::path* checkpoint_dir) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train_flownet: empty dataset");
  for (const auto& s : dataset) {
    if (s.image.width != cfg.image_size || s.image.height != cfg.image_size ||
        s.gt.width != cfg.image_size || s.gt.height != cfg.image_size)
      throw std::invalid_argument("train_flownet: sample resolution mismatch");
    if (s.label < 0 || s.label >= kLabelCount)
      throw std::invalid_argument("train_flownet: label out of range");
  }

  FlowNetModel model(cfg.image_size, cfg.levels, cfg.base_channels);
  model.init(derive_seed(cfg.seed, 10));
  Adam g_opt(model.net.params(), cfg.lr);

  Discriminator disc(cfg.image_size);
  disc.init(derive_seed(cfg.seed, 11));
  Adam d_opt(disc.params(), cfg.lr);

  Rng rng(derive_seed(cfg.seed, 12));
  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), size_t(0));

  const int S = cfg.image_size;
  if (epoch_loss) epoch_loss->clear();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double sum_l1 = 0.0;

    for (size_t idx : order) {
      const FlowSample& s = dataset[idx];
      const Tensor in = model.input_stack(s.image, s.label);
      const Tensor y = model.net.forward(in, true);

      FlowMap pred(S, S);
      pred.dx = y.plane(0);
      pred.dy = y.plane(1);
      if (s.image.has_mask()) {
        for (int yy = 0; yy < S; ++yy)
          for (int xx = 0; xx < S; ++xx)
            pred.valid(yy, xx) = s.image.mask(yy, xx) > 0.5f ? kFlowValid : kFlowInvalid;
      }

      // Supervise where the input is covered and the reference flow is usable.
      Plane lmask = Plane::Zero(S, S);
      for (int yy = 0; yy < S; ++yy)
        for (int xx = 0; xx < S; ++xx)
          lmask(yy, xx) = (s.gt.is_valid(xx, yy) &&
                           (!s.image.has_mask() || s.image.mask(yy, xx) > 0.5f))
                              ? 1.0f
                              : 0.0f;

      FlowMap gl1;
      const double l1 = loss_flow(pred, s.gt, lmask, &gl1);
      sum_l1 += l1;

      Tensor gout(2, S, S);
      gout.plane(0) = gl1.dx * float(cfg.l1_weight);
      gout.plane(1) = gl1.dy * float(cfg.l1_weight);

      if (cfg.adversarial) {
        const WarpResult wr = forward_warp(s.image, pred);
        const PlaneU8 everywhere = PlaneU8::Constant(S, S, uint8_t(1));
        const FillResult fill = fill_scattered(wr.image, wr.hit, everywhere);
        const ImageBuffer a_prime_img = backward_remap(fill.image, pred);

        const Tensor a = rgb_tensor(s.image);
        const Tensor a_prime = rgb_tensor(a_prime_img);

        Tensor g_ap;
        d_opt.zero_grad();
        loss_adversarial(disc, a, a_prime, s.label, &g_ap, true);
        d_opt.step();

        // The generator feels the critic through the remap's sample
        // coordinates; the splatted intermediate is held fixed per step.
        for (int yy = 0; yy < S; ++yy) {
          for (int xx = 0; xx < S; ++xx) {
            if (!pred.is_valid(xx, yy)) continue;
            const double cx = xx + 0.5 + pred.dx(yy, xx);
            const double cy = yy + 0.5 + pred.dy(yy, xx);
            if (!bilinear_in_bounds(S, S, cx, cy)) continue;
            double gx_acc = 0.0, gy_acc = 0.0;
            for (int c = 0; c < 3; ++c) {
              double dgx, dgy;
              sample_bilinear_grad(fill.image.rgba[size_t(c)], cx, cy, &dgx, &dgy);
              gx_acc += double(g_ap.at(c, yy, xx)) * dgx;
              gy_acc += double(g_ap.at(c, yy, xx)) * dgy;
            }
            gout.at(0, yy, xx) += float(cfg.gan_weight * gx_acc);
            gout.at(1, yy, xx) += float(cfg.gan_weight * gy_acc);
          }
        }
      }

      g_opt.zero_grad();
      model.net.backward(gout);
      g_opt.step();
    }

    if (epoch_loss) epoch_loss->push_back(sum_l1 / double(dataset.size()));
    write_epoch_checkpoint(checkpoint_dir, "flownet", epoch, model.net.params());
  }
  return model;
}

CompletionModel train_completion(const std::vector<CompletionSample>& dataset,
                                 const TrainConfig& cfg, std::vector<double>* epoch_loss,
                                 const std::filesystem::path* checkpoint_dir) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train_completion: empty dataset");
  for (const auto& s : dataset) {
    if (s.warped.width != cfg.image_size || s.warped.height != cfg.image_size ||
        s.target.width != cfg.image_size || s.target.height != cfg.image_size ||
        s.hit.rows() != cfg.image_size || s.region.rows() != cfg.image_size)
      throw std::invalid_argument("train_completion: sample resolution mismatch");
    if (s.label < 0 || s.label >= kLabelCount)
      throw std::invalid_argument("train_completion: label out of range");
  }

  CompletionModel model(cfg.image_size, cfg.levels, cfg.base_channels);
  model.init(derive_seed(cfg.seed, 20));
  Adam opt(model.net.params(), cfg.lr);

  Rng rng(derive_seed(cfg.seed, 21));
  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), size_t(0));

  if (epoch_loss) epoch_loss->clear();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double sum = 0.0;

    for (size_t idx : order) {
      const CompletionSample& s = dataset[idx];
      const Tensor in = model.input_stack(s.warped, s.hit, s.label);
      const Tensor res = model.net.forward(in, true);

      // Training sees the unclamped residual sum; clamping would flatten the
      // gradient exactly where the holes start out of range.
      Tensor pred = rgb_tensor(s.warped);
      pred.v += res.v;

      Tensor gpred;
      const double l = loss_completion(pred, rgb_tensor(s.target), s.hit, s.region,
                                       cfg.novel_weight, 1.0, &gpred);
      sum += l;

      gpred.v *= float(cfg.l1_weight);
      opt.zero_grad();
      model.net.backward(gpred);
      opt.step();
    }

    if (epoch_loss) epoch_loss->push_back(sum / double(dataset.size()));
    write_epoch_checkpoint(checkpoint_dir, "completion", epoch, model.net.params());
  }
  return model;
}

// ---- inference pipeline -------------------------------------------------------

namespace {

PlaneU8 dilate_square(const PlaneU8& m, int radius) {
  const int h = int(m.rows()), w = int(m.cols());
  PlaneU8 horiz = PlaneU8::Zero(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      uint8_t v = 0;
      const int lo = std::max(0, x - radius), hi = std::min(w - 1, x + radius);
      for (int i = lo; i <= hi && !v; ++i) v = m(y, i);
      horiz(y, x) = v;
    }
  }
  PlaneU8 out = PlaneU8::Zero(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      uint8_t v = 0;
      const int lo = std::max(0, y - radius), hi = std::min(h - 1, y + radius);
      for (int i = lo; i <= hi && !v; ++i) v = horiz(i, x);
      out(y, x) = v;
    }
  }
  return out;
}

[[noreturn]] void stage_fail(const char* stage, const std::exception& e) {
  throw std::runtime_error(std::string("undistort ") + stage + ": " + e.what());
}

}  // namespace

UndistortResult undistort(const ImageBuffer& image, const UndistortModels& models,
                          const FlowMap* oracle_flow, const double* known_distance_cm,
                          const Plane* region_mask) {
  if (image.width <= 0 || image.height <= 0)
    throw std::invalid_argument("undistort: empty image");
  const int W = image.width, H = image.height;

  UndistortResult result;

  try {
    if (known_distance_cm) {
      result.distance_cm = *known_distance_cm;
      result.estimate.distance_cm = *known_distance_cm;
    } else {
      if (!models.classifier) throw std::invalid_argument("no classifier model");
      const int cs = models.classifier->image_size();
      const ImageBuffer small =
          (W == cs && H == cs) ? image : resize_area(image, cs, cs);
      result.estimate = estimate_distance(*models.classifier, small);
      result.distance_cm = result.estimate.distance_cm;
    }
    result.label = label_from_estimate(result.distance_cm);
  } catch (const std::exception& e) {
    stage_fail("estimate", e);
  }

  try {
    if (oracle_flow) {
      if (oracle_flow->width != W || oracle_flow->height != H)
        throw std::invalid_argument("oracle flow resolution mismatch");
      result.flow = *oracle_flow;
    } else {
      if (!models.flownet) throw std::invalid_argument("no flow model");
      const int fs = models.flownet->image_size();
      const ImageBuffer small = (W == fs && H == fs) ? image : resize_area(image, fs, fs);
      const FlowMap coarse = models.flownet->predict_flow(small, result.label.index);
      result.flow = (W == fs && H == fs) ? coarse : rescale_flow(coarse, W, H);
    }
  } catch (const std::exception& e) {
    stage_fail("flow", e);
  }

  Plane regionf, hitf;
  try {
    const WarpResult wr = forward_warp(image, result.flow);
    hitf = Plane::Zero(H, W);
    long hits = 0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        hitf(y, x) = wr.hit(y, x) ? 1.0f : 0.0f;
        hits += wr.hit(y, x) ? 1 : 0;
      }
    if (hits == 0) throw std::invalid_argument("forward warp produced no pixels");

    PlaneU8 region;
    if (region_mask) {
      if (region_mask->rows() != H || region_mask->cols() != W)
        throw std::invalid_argument("region mask resolution mismatch");
      region = PlaneU8::Zero(H, W);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) region(y, x) = (*region_mask)(y, x) > 0.5f ? 1 : 0;
    } else {
      const int radius = std::max(2, int(std::lround(0.02 * std::min(W, H))));
      region = dilate_square(wr.hit, radius);
    }
    regionf = Plane::Zero(H, W);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) regionf(y, x) = region(y, x) ? 1.0f : 0.0f;

    const FillResult fill = fill_scattered(wr.image, wr.hit, region);
    result.warped = fill.image;
  } catch (const std::exception& e) {
    stage_fail("warp", e);
  }

  try {
    if (!models.completion) throw std::invalid_argument("no completion model");
    const int cs = models.completion->image_size();
    ImageBuffer warped_small =
        (W == cs && H == cs) ? result.warped : resize_area(result.warped, cs, cs);
    const Plane hit_small = (W == cs && H == cs) ? hitf : resize_area(hitf, cs, cs);
    const ImageBuffer comp_small =
        models.completion->complete(warped_small, hit_small, result.label.index);
    result.completed =
        (W == cs && H == cs) ? comp_small : resize_bilinear(comp_small, W, H);
  } catch (const std::exception& e) {
    stage_fail("complete", e);
  }

  try {
    const Plane raw_mask = (1.0f - hitf) * regionf;
    const Plane blend_mask = feather_mask(raw_mask, 2);
    const int levels = std::min(4, max_pyramid_levels(W, H));
    result.blended = laplacian_blend(result.completed, result.warped, blend_mask, levels);
    for (int c = 0; c < 3; ++c)
      result.blended.rgba[size_t(c)] =
          result.blended.rgba[size_t(c)].cwiseMax(0.0f).cwiseMin(1.0f);
    result.blended.mask = regionf;
  } catch (const std::exception& e) {
    stage_fail("blend", e);
  }

  return result;
}

// ---- dataset assembly ---------------------------------------------------------

std::vector<FlowSample> load_flow_samples(const KeyValueFile& manifest,
                                          const std::filesystem::path& dir, int size) {
  if (size < 16) throw std::invalid_argument("load_flow_samples: size must be >= 16");
  std::vector<FlowSample> out;
  for (const Record& r : manifest.records) {
    if (r.get("status") != "ok") continue;
    FlowSample s;
    const ImageBuffer near = read_png(dir / r.get("near_png"));
    const FlowMap gt = read_flow(dir / r.get("flow"));
    s.image = (near.width == size && near.height == size) ? near : resize_area(near, size, size);
    s.gt = (gt.width == size && gt.height == size) ? gt : rescale_flow(gt, size, size);
    s.label = int(r.get_long("label"));
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<CompletionSample> make_completion_samples(const KeyValueFile& manifest,
                                                      const std::filesystem::path& dir, int size) {
  if (size < 16) throw std::invalid_argument("make_completion_samples: size must be >= 16");
  std::vector<CompletionSample> out;
  for (const Record& r : manifest.records) {
    if (r.get("status") != "ok") continue;

    const ImageBuffer near = read_png(dir / r.get("near_png"));
    const ImageBuffer far = read_png(dir / r.get("far_png"));
    const FlowMap gt = read_flow(dir / r.get("flow"));

    CompletionSample s;
    s.target = (far.width == size && far.height == size) ? far : resize_area(far, size, size);
    const ImageBuffer near_s =
        (near.width == size && near.height == size) ? near : resize_area(near, size, size);
    const FlowMap gt_s =
        (gt.width == size && gt.height == size) ? gt : rescale_flow(gt, size, size);

    const WarpResult wr = forward_warp(near_s, gt_s);
    s.region = Plane::Zero(size, size);
    PlaneU8 region_u8 = PlaneU8::Zero(size, size);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const bool inside = !s.target.has_mask() || s.target.mask(y, x) > 0.5f;
        s.region(y, x) = inside ? 1.0f : 0.0f;
        region_u8(y, x) = inside ? 1 : 0;
      }
    }
    s.hit = Plane::Zero(size, size);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) s.hit(y, x) = wr.hit(y, x) ? 1.0f : 0.0f;

    const FillResult fill = fill_scattered(wr.image, wr.hit, region_u8);
    s.warped = fill.image;
    s.warped.mask = s.region;
    s.label = int(r.get_long("label"));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace unportrait
