#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "unportrait/nn.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace unportrait;

namespace {

Tensor random_tensor(Rng& rng, int c, int h, int w, double lo = -1.0, double hi = 1.0) {
  Tensor t(c, h, w);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.v[i] = float(rng.uniform(lo, hi));
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  return a.v.cast<double>().dot(b.v.cast<double>());
}

// Direct quintuple-loop convolution in double, written independently of the
// layer's im2col path.
double conv_ref(const Tensor& x, const Eigen::MatrixXf& W, const Eigen::VectorXf& b, int k,
                int stride, int pad, int oc, int oy, int ox) {
  double acc = double(b[oc]);
  for (int ch = 0; ch < x.c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int iy = oy * stride - pad + ky;
        const int ix = ox * stride - pad + kx;
        if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
        const Eigen::Index row = (Eigen::Index(ch) * k + ky) * k + kx;
        acc += double(W(oc, row)) * double(x.at(ch, iy, ix));
      }
    }
  }
  return acc;
}

// Central finite difference of J at selected elements of x against the
// analytic gradient ga. J must be re-evaluable after mutating x in place.
template <typename Fn>
void check_grad_elements(Fn J, Tensor& x, const Tensor& ga, Rng& rng, int samples, double h,
                         double tol) {
  REQUIRE(ga.same_shape(x));
  for (int s = 0; s < samples; ++s) {
    const Eigen::Index i = Eigen::Index(rng.index(uint64_t(x.size())));
    const float saved = x.v[i];
    x.v[i] = saved + float(h);
    const double jp = J(x);
    x.v[i] = saved - float(h);
    const double jm = J(x);
    x.v[i] = saved;
    const double fd = (jp - jm) / (2.0 * h);
    const double aa = double(ga.v[i]);
    CHECK(std::abs(fd - aa) <= tol * std::max(1.0, std::abs(aa)));
  }
}

}  // namespace

TEST_CASE("tensor layout is channel-major with row-major planes") {
  Tensor t(2, 3, 4);
  t.at(1, 2, 3) = 7.0f;
  CHECK(t.v[1 * 12 + 2 * 4 + 3] == 7.0f);
  CHECK(t.plane(1)(2, 3) == 7.0f);
  t.plane(0)(0, 1) = 3.0f;
  CHECK(t.at(0, 0, 1) == 3.0f);
  CHECK_THROWS_AS(Tensor(0, 2, 2), std::invalid_argument);
}

TEST_CASE("channel concat and extraction invert each other") {
  Rng rng(5);
  const Tensor a = random_tensor(rng, 2, 4, 5);
  const Tensor b = random_tensor(rng, 3, 4, 5);
  const Tensor ab = concat_channels(a, b);
  CHECK(ab.c == 5);
  CHECK(take_channels(ab, 0, 2).v == a.v);
  CHECK(take_channels(ab, 2, 3).v == b.v);
  CHECK_THROWS_AS(take_channels(ab, 4, 2), std::invalid_argument);
  Tensor c(1, 3, 5);
  CHECK_THROWS_AS(concat_channels(a, c), std::invalid_argument);
}

TEST_CASE("conv forward matches direct summation") {
  Rng rng(11);
  for (const auto& [stride, in_h, in_w] : {std::tuple{1, 6, 7}, std::tuple{2, 9, 7}}) {
    Conv2d conv(3, 4, 3, stride, 1);
    conv.init(rng);
    for (Eigen::Index i = 0; i < conv.b.size(); ++i) conv.b[i] = float(rng.uniform(-0.5, 0.5));
    const Tensor x = random_tensor(rng, 3, in_h, in_w);
    const Tensor y = conv.forward(x);
    CHECK(y.c == 4);
    CHECK(y.h == (in_h + 2 - 3) / stride + 1);
    CHECK(y.w == (in_w + 2 - 3) / stride + 1);
    for (int oc = 0; oc < y.c; ++oc)
      for (int oy = 0; oy < y.h; ++oy)
        for (int ox = 0; ox < y.w; ++ox)
          CHECK(double(y.at(oc, oy, ox)) ==
                doctest::Approx(conv_ref(x, conv.W, conv.b, 3, stride, 1, oc, oy, ox)).epsilon(1e-5));
  }
}

TEST_CASE("conv backward is the exact adjoint of the linear part") {
  Rng rng(13);
  Conv2d conv(2, 3, 3, 2, 1);
  conv.init(rng);
  Tensor x = random_tensor(rng, 2, 8, 8);
  const Tensor y = conv.forward(x, true);
  const Tensor r = random_tensor(rng, y.c, y.h, y.w);
  const Tensor gx = conv.backward(r);
  const Tensor zero(2, 8, 8);
  const Tensor y0 = conv.forward(zero);
  Tensor lin(y.c, y.h, y.w);
  lin.v = y.v - y0.v;  // bias removed, pure linear response
  CHECK(dot(r, lin) == doctest::Approx(gx.v.cast<double>().dot(x.v.cast<double>())).epsilon(1e-4));
}

TEST_CASE("conv gradients agree with finite differences") {
  Rng rng(17);
  Conv2d conv(2, 3, 3, 1, 1);
  conv.init(rng);
  Tensor x = random_tensor(rng, 2, 8, 8);
  Tensor r = random_tensor(rng, 3, 8, 8);
  const Tensor y = conv.forward(x, true);
  conv.gW.setZero();
  conv.gb.setZero();
  const Tensor gx = conv.backward(r);

  auto J = [&](const Tensor& t) { return dot(conv.forward(t), r); };
  check_grad_elements(J, x, gx, rng, 40, 1.0 / 64.0, 5e-3);

  // weight and bias gradients, same scalar objective
  for (int s = 0; s < 20; ++s) {
    const Eigen::Index i = Eigen::Index(rng.index(uint64_t(conv.W.size())));
    const float saved = conv.W.data()[i];
    conv.W.data()[i] = saved + 1.0f / 64.0f;
    const double jp = dot(conv.forward(x), r);
    conv.W.data()[i] = saved - 1.0f / 64.0f;
    const double jm = dot(conv.forward(x), r);
    conv.W.data()[i] = saved;
    const double fd = (jp - jm) * 32.0;
    CHECK(std::abs(fd - double(conv.gW.data()[i])) <= 5e-3 * std::max(1.0, std::abs(fd)));
  }
  for (Eigen::Index i = 0; i < conv.b.size(); ++i) {
    const float saved = conv.b[i];
    conv.b[i] = saved + 1.0f / 64.0f;
    const double jp = dot(conv.forward(x), r);
    conv.b[i] = saved - 1.0f / 64.0f;
    const double jm = dot(conv.forward(x), r);
    conv.b[i] = saved;
    CHECK((jp - jm) * 32.0 == doctest::Approx(double(conv.gb[i])).epsilon(5e-3));
  }
}

TEST_CASE("conv rejects bad shapes and unkept backward") {
  Rng rng(1);
  Conv2d conv(2, 3, 3, 1, 1);
  conv.init(rng);
  const Tensor wrong = random_tensor(rng, 4, 8, 8);
  CHECK_THROWS_AS(conv.forward(wrong), std::invalid_argument);
  Conv2d fresh(2, 3, 3, 1, 1);
  Tensor g(3, 8, 8);
  CHECK_THROWS_AS(fresh.backward(g), std::logic_error);
}

TEST_CASE("linear layer forward and gradients") {
  Rng rng(23);
  Linear fc(6, 3);
  fc.init(rng);
  Eigen::VectorXf x(6);
  for (int i = 0; i < 6; ++i) x[i] = float(rng.uniform(-1.0, 1.0));
  const Eigen::VectorXf y = fc.forward(x, true);
  for (int o = 0; o < 3; ++o) {
    double acc = double(fc.b[o]);
    for (int i = 0; i < 6; ++i) acc += double(fc.W(o, i)) * double(x[i]);
    CHECK(double(y[o]) == doctest::Approx(acc).epsilon(1e-6));
  }
  Eigen::VectorXf r(3);
  for (int i = 0; i < 3; ++i) r[i] = float(rng.uniform(-1.0, 1.0));
  fc.gW.setZero();
  fc.gb.setZero();
  const Eigen::VectorXf gx = fc.backward(r);
  // gx = W^T r, gW = r x^T, gb = r: all exact outer/inner products
  for (int i = 0; i < 6; ++i)
    CHECK(double(gx[i]) == doctest::Approx(double(fc.W.col(i).cast<double>().dot(r.cast<double>()))).epsilon(1e-5));
  for (int o = 0; o < 3; ++o) {
    CHECK(fc.gb[o] == r[o]);
    for (int i = 0; i < 6; ++i) CHECK(double(fc.gW(o, i)) == doctest::Approx(double(r[o]) * double(x[i])).epsilon(1e-6));
  }
}

TEST_CASE("instance norm standardizes each channel") {
  Rng rng(31);
  InstanceNorm norm(3);
  const Tensor x = random_tensor(rng, 3, 8, 8, -2.0, 5.0);
  const Tensor y = norm.forward(x);
  for (int ch = 0; ch < 3; ++ch) {
    const double mu = y.plane(ch).cast<double>().mean();
    const double var = (y.plane(ch).cast<double>() - mu).square().mean();
    CHECK(std::abs(mu) < 1e-5);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
  norm.gamma[1] = 3.0f;
  norm.beta[1] = -2.0f;
  const Tensor y2 = norm.forward(x);
  CHECK(double((y2.plane(1) - (y.plane(1) * 3.0f - 2.0f)).abs().maxCoeff()) < 1e-5);
}

TEST_CASE("instance norm gradient agrees with finite differences") {
  Rng rng(37);
  InstanceNorm norm(2);
  norm.gamma[0] = 1.3f;
  norm.beta[1] = 0.4f;
  Tensor x = random_tensor(rng, 2, 8, 8);
  Tensor r = random_tensor(rng, 2, 8, 8);
  norm.forward(x, true);
  norm.ggamma.setZero();
  norm.gbeta.setZero();
  const Tensor gx = norm.backward(r);
  auto J = [&](const Tensor& t) { return dot(norm.forward(t), r); };
  check_grad_elements(J, x, gx, rng, 40, 1.0 / 64.0, 1e-2);
  for (int ch = 0; ch < 2; ++ch) {
    const float saved = norm.gamma[ch];
    norm.gamma[ch] = saved + 1.0f / 64.0f;
    const double jp = dot(norm.forward(x), r);
    norm.gamma[ch] = saved - 1.0f / 64.0f;
    const double jm = dot(norm.forward(x), r);
    norm.gamma[ch] = saved;
    CHECK((jp - jm) * 32.0 == doctest::Approx(double(norm.ggamma[ch])).epsilon(1e-2));
    CHECK(double(norm.gbeta[ch]) == doctest::Approx(double(r.plane(ch).cast<double>().sum())).epsilon(1e-4));
  }
}

TEST_CASE("leaky relu forward and backward") {
  LeakyReLU act(0.2f);
  Tensor x(1, 2, 2);
  x.v << -2.0f, -0.5f, 0.0f, 3.0f;
  const Tensor y = act.forward(x, true);
  CHECK(y.v[0] == -0.4f);
  CHECK(y.v[1] == -0.1f);
  CHECK(y.v[2] == 0.0f);
  CHECK(y.v[3] == 3.0f);
  Tensor g(1, 2, 2);
  g.v << 1.0f, 1.0f, 1.0f, 1.0f;
  const Tensor gx = act.backward(g);
  CHECK(gx.v[0] == 0.2f);
  CHECK(gx.v[3] == 1.0f);

  LeakyReLU relu(0.0f);
  const Tensor yr = relu.forward(x);
  CHECK(yr.v[0] == 0.0f);
  CHECK(yr.v[3] == 3.0f);
}

TEST_CASE("nearest upsample doubles pixels and backward is its adjoint") {
  Rng rng(41);
  const Tensor x = random_tensor(rng, 2, 3, 4);
  const Tensor y = upsample2x_nearest(x);
  CHECK(y.h == 6);
  CHECK(y.w == 8);
  for (int ch = 0; ch < 2; ++ch)
    for (int yy = 0; yy < 6; ++yy)
      for (int xx = 0; xx < 8; ++xx) CHECK(y.at(ch, yy, xx) == x.at(ch, yy / 2, xx / 2));
  const Tensor r = random_tensor(rng, 2, 6, 8);
  const Tensor rb = upsample2x_nearest_backward(r);
  CHECK(dot(y, r) == doctest::Approx(dot(x, rb)).epsilon(1e-6));
  Tensor odd(1, 3, 3);
  CHECK_THROWS_AS(upsample2x_nearest_backward(odd), std::invalid_argument);
}

TEST_CASE("adam matches a double-precision reference for two steps") {
  Linear fc(2, 1);
  fc.W << 1.0f, -2.0f;
  fc.b[0] = 0.5f;
  std::vector<ParamRef> params;
  fc.collect(params);
  Adam opt(params, 2e-4);

  // reference state in double, same update rule
  std::vector<double> w = {1.0, -2.0, 0.5};
  std::vector<double> m(3, 0.0), v(3, 0.0);
  const std::vector<std::vector<double>> grads = {{0.5, -0.25, 0.1}, {-0.3, 0.6, -0.2}};
  for (int step = 0; step < 2; ++step) {
    fc.gW(0, 0) = float(grads[size_t(step)][0]);
    fc.gW(0, 1) = float(grads[size_t(step)][1]);
    fc.gb[0] = float(grads[size_t(step)][2]);
    opt.step();
    const double bc1 = 1.0 - std::pow(0.9, step + 1);
    const double bc2 = 1.0 - std::pow(0.999, step + 1);
    for (int i = 0; i < 3; ++i) {
      const double g = grads[size_t(step)][size_t(i)];
      m[size_t(i)] = 0.9 * m[size_t(i)] + 0.1 * g;
      v[size_t(i)] = 0.999 * v[size_t(i)] + 0.001 * g * g;
      w[size_t(i)] -= 2e-4 * (m[size_t(i)] / bc1) / (std::sqrt(v[size_t(i)] / bc2) + 1e-8);
    }
  }
  CHECK(double(fc.W(0, 0)) == doctest::Approx(w[0]).epsilon(1e-6));
  CHECK(double(fc.W(0, 1)) == doctest::Approx(w[1]).epsilon(1e-6));
  CHECK(double(fc.b[0]) == doctest::Approx(w[2]).epsilon(1e-6));

  opt.zero_grad();
  CHECK(fc.gW(0, 0) == 0.0f);
  CHECK(fc.gb[0] == 0.0f);
}

TEST_CASE("checkpoint blob round trips and is byte stable") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "unportrait_nn_ckpt";
  fs::create_directories(dir);
  Rng rng(47);
  Linear a(4, 3);
  a.init(rng);
  std::vector<ParamRef> pa;
  a.collect(pa);
  const fs::path p1 = dir / "a.updm";
  save_params(p1, pa);

  std::ifstream in(p1, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() == 16 + (12 + 3) * 4);
  CHECK(bytes.substr(0, 4) == "UPDM");
  CHECK(uint8_t(bytes[4]) == 1);   // version, little endian
  CHECK(uint8_t(bytes[8]) == 15);  // param count

  Linear b(4, 3);
  std::vector<ParamRef> pb;
  b.collect(pb);
  load_params(p1, pb);
  CHECK(a.W == b.W);
  CHECK(a.b == b.b);

  const fs::path p2 = dir / "a2.updm";
  save_params(p2, pa);
  std::ifstream in2(p2, std::ios::binary);
  std::string bytes2((std::istreambuf_iterator<char>(in2)), std::istreambuf_iterator<char>());
  CHECK(bytes == bytes2);

  Linear c(4, 4);  // wrong parameter count
  std::vector<ParamRef> pc;
  c.collect(pc);
  CHECK_THROWS_AS(load_params(p1, pc), std::runtime_error);

  const fs::path bad = dir / "bad.updm";
  std::ofstream out(bad, std::ios::binary);
  out << bytes.substr(0, bytes.size() - 2);
  out.close();
  CHECK_THROWS_AS(load_params(bad, pb), std::runtime_error);
}

TEST_CASE("same seed gives identical initialization") {
  Rng r1(99), r2(99);
  Conv2d a(3, 8, 3, 1, 1), b(3, 8, 3, 1, 1);
  a.init(r1);
  b.init(r2);
  CHECK(a.W == b.W);
}

TEST_CASE("binary cross entropy with logits is stable and correct") {
  CHECK(bce_with_logits(0.0, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce_with_logits(0.0, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce_with_logits(1000.0, 1.0) == doctest::Approx(0.0));
  CHECK(bce_with_logits(-1000.0, 0.0) == doctest::Approx(0.0));
  CHECK(std::isfinite(bce_with_logits(1000.0, 0.0)));
  CHECK(bce_with_logits(1000.0, 0.0) == doctest::Approx(1000.0).epsilon(1e-9));
  // symmetry: predicting 1 with logit z costs what predicting 0 with -z costs
  CHECK(bce_with_logits(1.7, 1.0) == doctest::Approx(bce_with_logits(-1.7, 0.0)).epsilon(1e-12));

  Rng rng(53);
  for (int i = 0; i < 20; ++i) {
    const double z = rng.uniform(-4.0, 4.0);
    const double t = rng.uniform() < 0.5 ? 0.0 : 1.0;
    const double h = 1e-6;
    const double fd = (bce_with_logits(z + h, t) - bce_with_logits(z - h, t)) / (2.0 * h);
    CHECK(bce_with_logits_grad(z, t) == doctest::Approx(fd).epsilon(1e-6));
  }
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(-800.0) == doctest::Approx(0.0));
  CHECK(sigmoid(800.0) == doctest::Approx(1.0));
}
