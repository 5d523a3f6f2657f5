#pragma once

#include "unportrait/core.hpp"

#include <Eigen/Dense>
#include <filesystem>

namespace unportrait {

// Channel-major (c, h, w) float tensor; one flat buffer, each channel a
// contiguous row-major h x w plane.
struct Tensor {
  int c = 0, h = 0, w = 0;
  Eigen::VectorXf v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_) { reset(c_, h_, w_); }

  void reset(int c_, int h_, int w_) {
    if (c_ <= 0 || h_ <= 0 || w_ <= 0) throw std::invalid_argument("Tensor: non-positive dims");
    c = c_;
    h = h_;
    w = w_;
    v = Eigen::VectorXf::Zero(Eigen::Index(c_) * h_ * w_);
  }

  Eigen::Index size() const { return v.size(); }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }

  float& at(int ch, int y, int x) { return v[(Eigen::Index(ch) * h + y) * w + x]; }
  float at(int ch, int y, int x) const { return v[(Eigen::Index(ch) * h + y) * w + x]; }

  Eigen::Map<Plane> plane(int ch) { return {v.data() + Eigen::Index(ch) * h * w, h, w}; }
  Eigen::Map<const Plane> plane(int ch) const { return {v.data() + Eigen::Index(ch) * h * w, h, w}; }
};

// Stack b's channels after a's. Both must share h x w.
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Channels [first, first+count) of x as a new tensor.
Tensor take_channels(const Tensor& x, int first, int count);

Tensor upsample2x_nearest(const Tensor& x);
// Adjoint of upsample2x_nearest: 2x2 block sums.
Tensor upsample2x_nearest_backward(const Tensor& gy);

// One optimizer-visible parameter block. w and g stay valid for the life of
// the owning layer; n is the element count of both.
struct ParamRef {
  float* w = nullptr;
  float* g = nullptr;
  Eigen::Index n = 0;
};

// 2D convolution, zero padding, square kernel. forward(x, true) caches what
// backward needs; backward accumulates into gW/gb and returns the input
// gradient. Layers are single-owner while training; forward(x, false) writes
// no state and is safe to share.
class Conv2d {
 public:
  Conv2d(int in_c, int out_c, int k, int stride, int pad);

  void init(Rng& rng);  // He-style: N(0, sqrt(2 / fan_in)) weights, zero bias
  Tensor forward(const Tensor& x, bool keep = false) const;
  Tensor backward(const Tensor& gy);
  void collect(std::vector<ParamRef>& out);

  int in_channels() const { return in_c_; }
  int out_channels() const { return out_c_; }

  Eigen::MatrixXf W;  // out_c x (in_c * k * k)
  Eigen::VectorXf b;
  Eigen::MatrixXf gW;
  Eigen::VectorXf gb;

 private:
  int in_c_, out_c_, k_, stride_, pad_;
  mutable Eigen::MatrixXf cols_;  // im2col of the kept input
  mutable int in_h_ = 0, in_w_ = 0;

  Eigen::MatrixXf im2col(const Tensor& x) const;
};

// Fully connected layer on flat vectors.
class Linear {
 public:
  Linear(int in_n, int out_n);

  void init(Rng& rng);
  Eigen::VectorXf forward(const Eigen::VectorXf& x, bool keep = false) const;
  Eigen::VectorXf backward(const Eigen::VectorXf& gy);
  void collect(std::vector<ParamRef>& out);

  Eigen::MatrixXf W;  // out_n x in_n
  Eigen::VectorXf b;
  Eigen::MatrixXf gW;
  Eigen::VectorXf gb;

 private:
  mutable Eigen::VectorXf x_;
};

// Per-channel normalization over the spatial extent, learnable scale/shift.
class InstanceNorm {
 public:
  explicit InstanceNorm(int c);

  Tensor forward(const Tensor& x, bool keep = false) const;
  Tensor backward(const Tensor& gy);
  void collect(std::vector<ParamRef>& out);

  Eigen::VectorXf gamma, beta;
  Eigen::VectorXf ggamma, gbeta;

  static constexpr float kEps = 1e-5f;

 private:
  int c_;
  mutable Tensor xhat_;
  mutable Eigen::VectorXf inv_std_;
};

// y = x for x >= 0, slope * x otherwise. slope 0 is plain ReLU.
class LeakyReLU {
 public:
  explicit LeakyReLU(float slope) : slope_(slope) {}

  Tensor forward(const Tensor& x, bool keep = false) const;
  Tensor backward(const Tensor& gy) const;
  Eigen::VectorXf forward(const Eigen::VectorXf& x, bool keep = false) const;
  Eigen::VectorXf backward(const Eigen::VectorXf& gy) const;

 private:
  float slope_;
  mutable Eigen::VectorXf pos_;  // 1 where the kept input was >= 0
};

// Adam with bias correction; holds moment state per ParamRef slot, in the
// order given. Deterministic: no reordering, no parallel reduction.
class Adam {
 public:
  explicit Adam(std::vector<ParamRef> params, double lr = 2e-4, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

  void zero_grad();
  void step();
  long step_count() const { return t_; }

 private:
  std::vector<ParamRef> params_;
  std::vector<Eigen::VectorXf> m_, v_;
  long t_ = 0;
  double lr_, b1_, b2_, eps_;
};

// Checkpoint blob: magic "UPDM", u32 version, u64 param count, then params as
// little-endian f32 in ParamRef order. Same bytes on every platform.
void save_params(const std::filesystem::path& path, const std::vector<ParamRef>& params);
// Throws std::runtime_error on bad magic/version or count mismatch.
void load_params(const std::filesystem::path& path, const std::vector<ParamRef>& params);

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// Stable binary cross-entropy on a raw logit: max(z,0) - z*t + log1p(exp(-|z|)).
inline double bce_with_logits(double z, double t) {
  return std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
}

// d/dz of bce_with_logits.
inline double bce_with_logits_grad(double z, double t) { return sigmoid(z) - t; }

}  // namespace unportrait
