#include "unportrait/nn.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace unportrait {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) {
  uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

}  // namespace

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.h != b.h || a.w != b.w) throw std::invalid_argument("concat_channels: spatial mismatch");
  Tensor out(a.c + b.c, a.h, a.w);
  out.v.head(a.v.size()) = a.v;
  out.v.tail(b.v.size()) = b.v;
  return out;
}

Tensor take_channels(const Tensor& x, int first, int count) {
  if (first < 0 || count <= 0 || first + count > x.c)
    throw std::invalid_argument("take_channels: range outside tensor");
  Tensor out(count, x.h, x.w);
  out.v = x.v.segment(Eigen::Index(first) * x.h * x.w, out.v.size());
  return out;
}

Tensor upsample2x_nearest(const Tensor& x) {
  Tensor out(x.c, x.h * 2, x.w * 2);
  for (int ch = 0; ch < x.c; ++ch) {
    auto src = x.plane(ch);
    auto dst = out.plane(ch);
    for (int y = 0; y < out.h; ++y)
      for (int xx = 0; xx < out.w; ++xx) dst(y, xx) = src(y / 2, xx / 2);
  }
  return out;
}

Tensor upsample2x_nearest_backward(const Tensor& gy) {
  if (gy.h % 2 != 0 || gy.w % 2 != 0)
    throw std::invalid_argument("upsample2x_nearest_backward: odd dims");
  Tensor out(gy.c, gy.h / 2, gy.w / 2);
  for (int ch = 0; ch < gy.c; ++ch) {
    auto src = gy.plane(ch);
    auto dst = out.plane(ch);
    for (int y = 0; y < gy.h; ++y)
      for (int xx = 0; xx < gy.w; ++xx) dst(y / 2, xx / 2) += src(y, xx);
  }
  return out;
}

Conv2d::Conv2d(int in_c, int out_c, int k, int stride, int pad)
    : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad) {
  if (in_c <= 0 || out_c <= 0 || k <= 0 || stride <= 0 || pad < 0)
    throw std::invalid_argument("Conv2d: bad geometry");
  W = Eigen::MatrixXf::Zero(out_c, Eigen::Index(in_c) * k * k);
  b = Eigen::VectorXf::Zero(out_c);
  gW = Eigen::MatrixXf::Zero(W.rows(), W.cols());
  gb = Eigen::VectorXf::Zero(out_c);
}

void Conv2d::init(Rng& rng) {
  const double stddev = std::sqrt(2.0 / double(W.cols()));
  // Explicit loop order fixes the draw sequence independent of storage order.
  for (Eigen::Index i = 0; i < W.rows(); ++i)
    for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = float(rng.normal(0.0, stddev));
  b.setZero();
}

Eigen::MatrixXf Conv2d::im2col(const Tensor& x) const {
  const int oh = (x.h + 2 * pad_ - k_) / stride_ + 1;
  const int ow = (x.w + 2 * pad_ - k_) / stride_ + 1;
  Eigen::MatrixXf cols(Eigen::Index(in_c_) * k_ * k_, Eigen::Index(oh) * ow);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const Eigen::Index col = Eigen::Index(oy) * ow + ox;
      Eigen::Index row = 0;
      for (int ch = 0; ch < in_c_; ++ch) {
        for (int ky = 0; ky < k_; ++ky) {
          const int iy = oy * stride_ - pad_ + ky;
          for (int kx = 0; kx < k_; ++kx, ++row) {
            const int ix = ox * stride_ - pad_ + kx;
            cols(row, col) = (iy >= 0 && iy < x.h && ix >= 0 && ix < x.w) ? x.at(ch, iy, ix) : 0.0f;
          }
        }
      }
    }
  }
  return cols;
}

Tensor Conv2d::forward(const Tensor& x, bool keep) const {
  if (x.c != in_c_) throw std::invalid_argument("Conv2d: input channel mismatch");
  const int oh = (x.h + 2 * pad_ - k_) / stride_ + 1;
  const int ow = (x.w + 2 * pad_ - k_) / stride_ + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("Conv2d: input smaller than kernel");
  Eigen::MatrixXf cols = im2col(x);
  Tensor out(out_c_, oh, ow);
  Eigen::Map<RowMat> y(out.v.data(), out_c_, Eigen::Index(oh) * ow);
  y.noalias() = W * cols;
  y.colwise() += b;
  if (keep) {
    cols_ = std::move(cols);
    in_h_ = x.h;
    in_w_ = x.w;
  }
  return out;
}

Tensor Conv2d::backward(const Tensor& gy) {
  if (cols_.size() == 0) throw std::logic_error("Conv2d::backward without kept forward");
  const Eigen::Index ohw = Eigen::Index(gy.h) * gy.w;
  if (gy.c != out_c_ || ohw != cols_.cols()) throw std::invalid_argument("Conv2d: gradient shape mismatch");
  Eigen::Map<const RowMat> gym(gy.v.data(), out_c_, ohw);
  gW.noalias() += gym * cols_.transpose();
  gb.noalias() += gym.rowwise().sum();
  Eigen::MatrixXf gcols = W.transpose() * gym;
  Tensor gx(in_c_, in_h_, in_w_);
  for (int oy = 0; oy < gy.h; ++oy) {
    for (int ox = 0; ox < gy.w; ++ox) {
      const Eigen::Index col = Eigen::Index(oy) * gy.w + ox;
      Eigen::Index row = 0;
      for (int ch = 0; ch < in_c_; ++ch) {
        for (int ky = 0; ky < k_; ++ky) {
          const int iy = oy * stride_ - pad_ + ky;
          for (int kx = 0; kx < k_; ++kx, ++row) {
            const int ix = ox * stride_ - pad_ + kx;
            if (iy >= 0 && iy < in_h_ && ix >= 0 && ix < in_w_) gx.at(ch, iy, ix) += gcols(row, col);
          }
        }
      }
    }
  }
  return gx;
}

void Conv2d::collect(std::vector<ParamRef>& out) {
  out.push_back({W.data(), gW.data(), W.size()});
  out.push_back({b.data(), gb.data(), b.size()});
}

Linear::Linear(int in_n, int out_n) {
  if (in_n <= 0 || out_n <= 0) throw std::invalid_argument("Linear: bad geometry");
  W = Eigen::MatrixXf::Zero(out_n, in_n);
  b = Eigen::VectorXf::Zero(out_n);
  gW = Eigen::MatrixXf::Zero(out_n, in_n);
  gb = Eigen::VectorXf::Zero(out_n);
}

void Linear::init(Rng& rng) {
  const double stddev = std::sqrt(2.0 / double(W.cols()));
  for (Eigen::Index i = 0; i < W.rows(); ++i)
    for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = float(rng.normal(0.0, stddev));
  b.setZero();
}

Eigen::VectorXf Linear::forward(const Eigen::VectorXf& x, bool keep) const {
  if (x.size() != W.cols()) throw std::invalid_argument("Linear: input size mismatch");
  if (keep) x_ = x;
  return W * x + b;
}

Eigen::VectorXf Linear::backward(const Eigen::VectorXf& gy) {
  if (x_.size() != W.cols()) throw std::logic_error("Linear::backward without kept forward");
  gW.noalias() += gy * x_.transpose();
  gb.noalias() += gy;
  return W.transpose() * gy;
}

void Linear::collect(std::vector<ParamRef>& out) {
  out.push_back({W.data(), gW.data(), W.size()});
  out.push_back({b.data(), gb.data(), b.size()});
}

InstanceNorm::InstanceNorm(int c) : c_(c) {
  if (c <= 0) throw std::invalid_argument("InstanceNorm: bad channel count");
  gamma = Eigen::VectorXf::Ones(c);
  beta = Eigen::VectorXf::Zero(c);
  ggamma = Eigen::VectorXf::Zero(c);
  gbeta = Eigen::VectorXf::Zero(c);
}

Tensor InstanceNorm::forward(const Tensor& x, bool keep) const {
  if (x.c != c_) throw std::invalid_argument("InstanceNorm: channel mismatch");
  Tensor out(x.c, x.h, x.w);
  Tensor xhat(x.c, x.h, x.w);
  Eigen::VectorXf inv_std(c_);
  for (int ch = 0; ch < c_; ++ch) {
    auto src = x.plane(ch);
    const double mu = src.cast<double>().mean();
    const double var = (src.cast<double>() - mu).square().mean();
    const float is = float(1.0 / std::sqrt(var + double(kEps)));
    inv_std[ch] = is;
    xhat.plane(ch) = (src - float(mu)) * is;
    out.plane(ch) = xhat.plane(ch) * gamma[ch] + beta[ch];
  }
  if (keep) {
    xhat_ = std::move(xhat);
    inv_std_ = std::move(inv_std);
  }
  return out;
}

Tensor InstanceNorm::backward(const Tensor& gy) {
  if (!gy.same_shape(xhat_)) throw std::logic_error("InstanceNorm::backward without matching forward");
  Tensor gx(gy.c, gy.h, gy.w);
  const float n = float(gy.h) * float(gy.w);
  for (int ch = 0; ch < c_; ++ch) {
    auto g = gy.plane(ch);
    auto xh = xhat_.plane(ch);
    ggamma[ch] += (g * xh).sum();
    gbeta[ch] += g.sum();
    // d/dx of (x - mu) / sigma with mu, sigma functions of x.
    const Plane gxh = g * gamma[ch];
    const float sum_g = gxh.sum();
    const float sum_gx = (gxh * xh).sum();
    gx.plane(ch) = (inv_std_[ch] / n) * (n * gxh - sum_g - xh * sum_gx);
  }
  return gx;
}

void InstanceNorm::collect(std::vector<ParamRef>& out) {
  out.push_back({gamma.data(), ggamma.data(), gamma.size()});
  out.push_back({beta.data(), gbeta.data(), beta.size()});
}

Eigen::VectorXf LeakyReLU::forward(const Eigen::VectorXf& x, bool keep) const {
  Eigen::VectorXf pos = (x.array() >= 0.0f).cast<float>().matrix();
  Eigen::VectorXf y = (x.array() * (pos.array() + slope_ * (1.0f - pos.array()))).matrix();
  if (keep) pos_ = std::move(pos);
  return y;
}

Eigen::VectorXf LeakyReLU::backward(const Eigen::VectorXf& gy) const {
  if (pos_.size() != gy.size()) throw std::logic_error("LeakyReLU::backward without kept forward");
  return (gy.array() * (pos_.array() + slope_ * (1.0f - pos_.array()))).matrix();
}

Tensor LeakyReLU::forward(const Tensor& x, bool keep) const {
  Tensor out(x.c, x.h, x.w);
  out.v = forward(x.v, keep);
  return out;
}

Tensor LeakyReLU::backward(const Tensor& gy) const {
  Tensor out(gy.c, gy.h, gy.w);
  out.v = backward(gy.v);
  return out;
}

Adam::Adam(std::vector<ParamRef> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const ParamRef& p : params_) {
    m_.push_back(Eigen::VectorXf::Zero(p.n));
    v_.push_back(Eigen::VectorXf::Zero(p.n));
  }
}

void Adam::zero_grad() {
  for (const ParamRef& p : params_) Eigen::Map<Eigen::VectorXf>(p.g, p.n).setZero();
}

void Adam::step() {
  ++t_;
  const float bc1 = float(1.0 - std::pow(b1_, double(t_)));
  const float bc2 = float(1.0 - std::pow(b2_, double(t_)));
  for (size_t i = 0; i < params_.size(); ++i) {
    const ParamRef& p = params_[i];
    Eigen::Map<Eigen::VectorXf> w(p.w, p.n);
    Eigen::Map<const Eigen::VectorXf> g(p.g, p.n);
    m_[i] = float(b1_) * m_[i] + float(1.0 - b1_) * g;
    v_[i] = (float(b2_) * v_[i].array() + float(1.0 - b2_) * g.array().square()).matrix();
    w.array() -= float(lr_) * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + float(eps_));
  }
}

void save_params(const std::filesystem::path& path, const std::vector<ParamRef>& params) {
  uint64_t count = 0;
  for (const ParamRef& p : params) count += uint64_t(p.n);
  std::string out;
  out.reserve(16 + size_t(count) * 4);
  out += "UPDM";
  put_u32(out, 1);
  put_u64(out, count);
  for (const ParamRef& p : params)
    for (Eigen::Index i = 0; i < p.n; ++i) put_f32(out, p.w[i]);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for writing");
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw std::runtime_error(path.string() + ": write failed");
}

void load_params(const std::filesystem::path& path, const std::vector<ParamRef>& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for reading");
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string data = std::move(ss).str();
  uint64_t expect = 0;
  for (const ParamRef& p : params) expect += uint64_t(p.n);
  if (data.size() != 16 + size_t(expect) * 4)
    throw std::runtime_error(path.string() + ": checkpoint size mismatch");
  if (std::memcmp(data.data(), "UPDM", 4) != 0)
    throw std::runtime_error(path.string() + ": bad checkpoint magic");
  auto u32_at = [&](size_t off) {
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | uint8_t(data[off + size_t(i)]);
    return v;
  };
  if (u32_at(4) != 1) throw std::runtime_error(path.string() + ": unsupported checkpoint version");
  const uint64_t count = uint64_t(u32_at(8)) | uint64_t(u32_at(12)) << 32;
  if (count != expect) throw std::runtime_error(path.string() + ": checkpoint parameter count mismatch");
  size_t off = 16;
  for (const ParamRef& p : params) {
    for (Eigen::Index i = 0; i < p.n; ++i, off += 4) {
      const uint32_t v = u32_at(off);
      std::memcpy(&p.w[i], &v, 4);
    }
  }
}

}  // namespace unportrait
