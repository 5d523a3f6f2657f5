#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "unportrait/camera.hpp"
#include "unportrait/pyramid.hpp"
#include "unportrait/undistort.hpp"
#include "unportrait/warp.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

using namespace unportrait;

namespace {

Tensor random_tensor(Rng& rng, int c, int h, int w, double lo = -1.0, double hi = 1.0) {
  Tensor t(c, h, w);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.v[i] = float(rng.uniform(lo, hi));
  return t;
}

// Smooth low-frequency test card with a full mask.
ImageBuffer smooth_image(int w, int h, double phase) {
  ImageBuffer img;
  img.reset(w, h, true);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double u = (x + 0.5) / w, v = (y + 0.5) / h;
      img.rgba[0](y, x) = float(0.5 + 0.4 * std::sin(2.0 * M_PI * (u + phase)));
      img.rgba[1](y, x) = float(0.5 + 0.3 * std::cos(2.0 * M_PI * (v - phase)));
      img.rgba[2](y, x) = float(0.5 + 0.25 * std::sin(2.0 * M_PI * (u + v + 2.0 * phase)));
      img.rgba[3](y, x) = 1.0f;
      img.mask(y, x) = 1.0f;
    }
  }
  return img;
}

// Shaded disk on a transparent background.
ImageBuffer disk_image(int size, double cx, double cy, double radius) {
  ImageBuffer img;
  img.reset(size, size, true);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (dx * dx + dy * dy > radius * radius) continue;
      const double shade = 0.5 + 0.35 * std::sin(0.05 * dx) * std::cos(0.045 * dy);
      img.rgba[0](y, x) = float(shade);
      img.rgba[1](y, x) = float(0.9 - 0.5 * shade);
      img.rgba[2](y, x) = float(0.3 + 0.2 * shade);
      img.rgba[3](y, x) = 1.0f;
      img.mask(y, x) = 1.0f;
    }
  }
  return img;
}

void zero_all(const std::vector<ParamRef>& params) {
  for (const ParamRef& p : params) std::fill(p.w, p.w + p.n, 0.0f);
}

double rel_gap(double fd, double ga) { return std::abs(fd - ga) / std::max(1.0, std::abs(ga)); }

void expect_stage(const std::function<void()>& fn, const std::string& prefix) {
  bool hit = false;
  try {
    fn();
  } catch (const std::runtime_error& e) {
    hit = std::string(e.what()).rfind(prefix, 0) == 0;
    INFO("message: " << e.what());
    CHECK(hit);
  }
  CHECK(hit);
}

Plane erode_disk_mask(const Plane& mask, int margin) {
  const int h = int(mask.rows()), w = int(mask.cols());
  Plane out = Plane::Zero(h, w);
  for (int y = margin; y < h - margin; ++y) {
    for (int x = margin; x < w - margin; ++x) {
      bool all = true;
      for (int dy = -margin; dy <= margin && all; ++dy)
        for (int dx = -margin; dx <= margin && all; ++dx)
          if (mask(y + dy, x + dx) <= 0.5f) all = false;
      out(y, x) = all ? 1.0f : 0.0f;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("label planes are one-hot") {
  const Tensor t = label_planes(3, 4, 5);
  CHECK(t.c == 8);
  CHECK(t.h == 4);
  CHECK(t.w == 5);
  for (int c = 0; c < 8; ++c) {
    const float expect = c == 3 ? 1.0f : 0.0f;
    CHECK(t.plane(c).minCoeff() == expect);
    CHECK(t.plane(c).maxCoeff() == expect);
  }
  CHECK_THROWS_AS(label_planes(-1, 4, 4), std::invalid_argument);
  CHECK_THROWS_AS(label_planes(8, 4, 4), std::invalid_argument);
}

TEST_CASE("network shape contracts and input validation") {
  for (int size : {64, 96}) {
    FlowNetModel m(size);
    m.init(1);
    const ImageBuffer img = smooth_image(size, size, 0.1);
    const FlowMap f = m.predict_flow(img, 2);
    CHECK(f.width == size);
    CHECK(f.height == size);
    CHECK((f.valid == uint8_t(kFlowValid)).all());
  }

  for (int size : {32, 48}) {
    CompletionModel m(size, 4, 8);
    m.init(2);
    const ImageBuffer img = smooth_image(size, size, 0.3);
    const Plane hit = Plane::Ones(size, size);
    const ImageBuffer out = m.complete(img, hit, 5);
    CHECK(out.width == size);
    CHECK(out.height == size);
    for (int c = 0; c < 3; ++c) {
      CHECK(out.rgba[size_t(c)].minCoeff() >= 0.0f);
      CHECK(out.rgba[size_t(c)].maxCoeff() <= 1.0f);
    }
  }

  CHECK_THROWS_AS(FlowNetModel(50), std::invalid_argument);   // not divisible by 8
  CHECK_THROWS_AS(FlowNetModel(8), std::invalid_argument);    // below minimum
  CHECK_THROWS_AS(CompletionModel(20, 4), std::invalid_argument);

  UNetConfig cfg;
  cfg.in_channels = 3;
  cfg.out_channels = 2;
  UNet net(cfg);
  net.init(3);
  Tensor odd(3, 20, 24);
  CHECK_THROWS_AS(net.forward(odd), std::invalid_argument);
  Tensor wrong_c(4, 32, 32);
  CHECK_THROWS_AS(net.forward(wrong_c), std::invalid_argument);

  // Stack layout: RGB, coverage, then the one-hot distance planes.
  FlowNetModel fm(32, 3, 8);
  ImageBuffer img = smooth_image(32, 32, 0.2);
  Tensor stack = fm.input_stack(img, 4);
  CHECK(stack.c == 12);
  CHECK(float((stack.plane(0) - img.rgba[0]).abs().maxCoeff()) == 0.0f);
  CHECK(stack.plane(3).minCoeff() == 1.0f);
  CHECK(stack.plane(4 + 4).minCoeff() == 1.0f);
  CHECK(stack.plane(4 + 2).maxCoeff() == 0.0f);
  img.mask.setZero();
  img.mask(5, 7) = 1.0f;
  stack = fm.input_stack(img, 0);
  CHECK(stack.plane(3)(5, 7) == 1.0f);
  CHECK(stack.plane(3)(0, 0) == 0.0f);

  ImageBuffer small = smooth_image(16, 16, 0.0);
  CHECK_THROWS_AS(fm.input_stack(small, 0), std::invalid_argument);
}

TEST_CASE("untrained networks produce finite bounded outputs") {
  FlowNetModel m(32, 3, 8);
  m.init(7);
  const ImageBuffer img = smooth_image(32, 32, 0.7);
  const FlowMap f = m.predict_flow(img, 1);
  CHECK(f.dx.isFinite().all());
  CHECK(f.dy.isFinite().all());
  CHECK(f.dx.abs().maxCoeff() < 100.0f);
  CHECK(f.dy.abs().maxCoeff() < 100.0f);

  CompletionModel cm(32, 3, 8);
  cm.init(8);
  const ImageBuffer out = cm.complete(img, Plane::Ones(32, 32), 3);
  for (int c = 0; c < 3; ++c) CHECK(out.rgba[size_t(c)].isFinite().all());
}

TEST_CASE("unet gradients match finite differences") {
  UNetConfig cfg;
  cfg.in_channels = 3;
  cfg.out_channels = 2;
  cfg.levels = 3;
  cfg.base_channels = 4;
  UNet net(cfg);
  net.init(21);

  Rng rng(22);
  Tensor x = random_tensor(rng, 3, 8, 8);
  const Tensor r = random_tensor(rng, 2, 8, 8);

  const Tensor y0 = net.forward(x, true);
  const Tensor gx = net.backward(r);
  REQUIRE(gx.same_shape(x));
  CHECK(double(gx.v.cast<double>().cwiseAbs().maxCoeff()) > 0.0);

  auto loss_at = [&]() { return net.forward(x).v.cast<double>().dot(r.v.cast<double>()); };

  // The activations are piecewise linear, so a step that straddles a kink
  // breaks the comparison; step-halving disagreement flags those samples.
  const double h = 1.0 / 64.0;
  int in_accepted = 0;
  for (Eigen::Index i = 0; i < x.size(); i += 17) {
    const float keep = x.v[i];
    auto fd_at = [&](double step) {
      x.v[i] = keep + float(step);
      const double lp = loss_at();
      x.v[i] = keep - float(step);
      const double lm = loss_at();
      x.v[i] = keep;
      return (lp - lm) / (2.0 * step);
    };
    const double fd = fd_at(h);
    const double fd_half = fd_at(h / 2.0);
    if (std::abs(fd - fd_half) > 2e-3 * std::max(1.0, std::abs(fd))) continue;
    INFO("input element " << i);
    CHECK(rel_gap(fd, double(gx.v[i])) < 1e-2);
    ++in_accepted;
  }
  CHECK(in_accepted >= 5);

  // Parameter gradients, sampled across every layer's blocks. Norm scales
  // shift whole channel maps, so steps often straddle an activation kink;
  // step-halving disagreement drops those samples deterministically.
  const std::vector<ParamRef> prefs = net.params();
  int accepted = 0;
  for (size_t pi = 0; pi < prefs.size(); pi += 3) {
    const ParamRef& p = prefs[pi];
    const Eigen::Index j = Eigen::Index(pi * 7) % p.n;
    const float keep = p.w[j];
    auto fd_at = [&](double step) {
      p.w[j] = keep + float(step);
      const double lp = loss_at();
      p.w[j] = keep - float(step);
      const double lm = loss_at();
      p.w[j] = keep;
      return (lp - lm) / (2.0 * step);
    };
    const double fd = fd_at(h);
    const double fd_half = fd_at(h / 2.0);
    if (std::abs(fd - fd_half) > 2e-3 * std::max(1.0, std::abs(fd))) continue;
    INFO("param block " << pi << " element " << j);
    CHECK(rel_gap(fd, double(p.g[j])) < 1e-2);
    ++accepted;
  }
  CHECK(accepted >= 4);
}

TEST_CASE("flow loss matches its cases and finite differences") {
  const int S = 8;
  Rng rng(31);
  FlowMap gt(S, S);
  // Values on the 1/64 grid stay exact under float offsets, keeping the
  // closed-form cases bit-true.
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      gt.dx(y, x) = float(std::round(rng.uniform(-2.0, 2.0) * 64.0) / 64.0);
      gt.dy(y, x) = float(std::round(rng.uniform(-2.0, 2.0) * 64.0) / 64.0);
    }
  const Plane ones = Plane::Ones(S, S);

  FlowMap pred = gt;
  CHECK(loss_flow(pred, gt, ones) == 0.0);

  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) pred.dx(y, x) += 1.0f;
  CHECK(loss_flow(pred, gt, ones) == doctest::Approx(0.5).epsilon(1e-12));

  // Masked: only counted pixels contribute.
  Plane half = Plane::Zero(S, S);
  for (int y = 0; y < S / 2; ++y)
    for (int x = 0; x < S; ++x) half(y, x) = 1.0f;
  CHECK(loss_flow(pred, gt, half) == doctest::Approx(0.5).epsilon(1e-12));

  // Gradient vs central differences; offsets are kept clear of the L1 kink.
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const double sx = rng.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
      const double sy = rng.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
      pred.dx(y, x) = gt.dx(y, x) + float(sx * rng.uniform(0.1, 0.5));
      pred.dy(y, x) = gt.dy(y, x) + float(sy * rng.uniform(0.1, 0.5));
    }
  Plane mask = Plane::Ones(S, S);
  mask(0, 0) = 0.0f;

  FlowMap grad;
  loss_flow(pred, gt, mask, &grad);
  CHECK(grad.dx(0, 0) == 0.0f);

  const double h = 1.0 / 64.0;
  long n_checked = 0;
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; x += 3) {
      for (int comp = 0; comp < 2; ++comp) {
        Plane& pc = comp == 0 ? pred.dx : pred.dy;
        const float keep = pc(y, x);
        pc(y, x) = keep + float(h);
        const double lp = loss_flow(pred, gt, mask);
        pc(y, x) = keep - float(h);
        const double lm = loss_flow(pred, gt, mask);
        pc(y, x) = keep;
        const double fd = (lp - lm) / (2.0 * h);
        const double ga = comp == 0 ? double(grad.dx(y, x)) : double(grad.dy(y, x));
        INFO("pixel " << x << "," << y << " comp " << comp);
        CHECK(rel_gap(fd, ga) < 1e-4);
        ++n_checked;
      }
    }
  }
  CHECK(n_checked >= 40);

  // Analytic value: +-1/(2n) on counted pixels.
  const double scale = 1.0 / (2.0 * 63.0);
  CHECK(std::abs(double(grad.dx(1, 1))) == doctest::Approx(scale).epsilon(1e-6));

  FlowMap small(4, 4);
  CHECK_THROWS_AS(loss_flow(small, gt, ones), std::invalid_argument);
  CHECK_THROWS_AS(loss_flow(pred, gt, Plane::Zero(S, S)), std::invalid_argument);
}

TEST_CASE("completion loss weight algebra and finite differences") {
  const int S = 8;
  Rng rng(41);
  const Tensor target = random_tensor(rng, 3, S, S, 0.0, 1.0);

  Plane region = Plane::Ones(S, S);
  Plane hit = Plane::Ones(S, S);
  for (int y = 2; y < 5; ++y)
    for (int x = 3; x < 5; ++x) hit(y, x) = 0.0f;  // 6 novel pixels

  Tensor pred = target;
  CHECK(loss_completion(pred, target, hit, region) == 0.0);

  // Error only outside the novel region: n_rest * e / (5 n_novel + n_rest).
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      if (hit(y, x) <= 0.5f) continue;
      for (int c = 0; c < 3; ++c) pred.at(c, y, x) += 0.12f;
    }
  double manual = 0.0;
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      if (hit(y, x) <= 0.5f) continue;
      for (int c = 0; c < 3; ++c)
        manual += std::abs(double(pred.at(c, y, x)) - target.at(c, y, x)) / 3.0;
    }
  const double n_novel = 6.0, n_rest = 58.0;
  CHECK(loss_completion(pred, target, hit, region) ==
        doctest::Approx(manual / (5.0 * n_novel + n_rest)).epsilon(1e-12));
  CHECK(loss_completion(pred, target, hit, region) ==
        doctest::Approx(0.12 * n_rest / (5.0 * n_novel + n_rest)).epsilon(1e-4));

  // Zero outside weight makes non-novel pixels irrelevant.
  Tensor pred2 = pred;
  pred2.at(0, 0, 0) += 0.3f;
  pred2.at(2, 7, 7) -= 0.2f;
  CHECK(loss_completion(pred, target, hit, region, 5.0, 0.0) ==
        loss_completion(pred2, target, hit, region, 5.0, 0.0));

  // Empty novel region reduces to plain masked L1.
  const Plane all_hit = Plane::Ones(S, S);
  double plain = 0.0;
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x)
      for (int c = 0; c < 3; ++c)
        plain += std::abs(double(pred.at(c, y, x)) - target.at(c, y, x)) / 3.0;
  plain /= double(S * S);
  CHECK(loss_completion(pred, target, all_hit, region) == doctest::Approx(plain).epsilon(1e-12));

  // Gradient vs central differences, kink-safe offsets.
  Tensor pred3 = target;
  for (Eigen::Index i = 0; i < pred3.size(); ++i) {
    const double s = rng.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
    pred3.v[i] += float(s * rng.uniform(0.1, 0.4));
  }
  Plane region2 = region;
  region2(7, 0) = 0.0f;
  Tensor grad;
  const double base = loss_completion(pred3, target, hit, region2, 5.0, 1.0, &grad);
  CHECK(base > 0.0);
  CHECK(grad.at(0, 7, 0) == 0.0f);

  const double h = 1.0 / 64.0;
  for (Eigen::Index i = 0; i < pred3.size(); i += 11) {
    const float keep = pred3.v[i];
    pred3.v[i] = keep + float(h);
    const double lp = loss_completion(pred3, target, hit, region2);
    pred3.v[i] = keep - float(h);
    const double lm = loss_completion(pred3, target, hit, region2);
    pred3.v[i] = keep;
    const double fd = (lp - lm) / (2.0 * h);
    INFO("element " << i);
    CHECK(rel_gap(fd, double(grad.v[i])) < 1e-4);
  }

  CHECK_THROWS_AS(loss_completion(pred, target, hit, Plane::Zero(S, S)),
                  std::invalid_argument);
  CHECK_THROWS_AS(loss_completion(pred, target, hit, region, -1.0), std::invalid_argument);
  Tensor bad(3, 4, 4);
  CHECK_THROWS_AS(loss_completion(bad, target, hit, region), std::invalid_argument);
}

TEST_CASE("adversarial loss values and discriminator gradients") {
  Rng rng(51);
  const Tensor a = random_tensor(rng, 3, 8, 8, 0.0, 1.0);
  const Tensor ap = random_tensor(rng, 3, 8, 8, 0.0, 1.0);

  Discriminator zero_disc(8);
  zero_disc.init(1);
  zero_all(zero_disc.params());
  const AdvLosses z = loss_adversarial(zero_disc, a, ap, 2);
  CHECK(z.d_loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(z.g_loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Saturated critic: the loss terms vanish at clipped logits.
  CHECK(bce_with_logits(20.0, 1.0) + bce_with_logits(-20.0, 0.0) <= 1e-8);

  // Structural identity against the public logit path.
  Discriminator disc(8);
  disc.init(52);
  const double zr = disc.logit(disc.make_stack(a, a, 3));
  const double zf = disc.logit(disc.make_stack(a, ap, 3));
  const AdvLosses l = loss_adversarial(disc, a, ap, 3);
  CHECK(l.d_loss == doctest::Approx(bce_with_logits(zr, 1.0) + bce_with_logits(zf, 0.0))
                        .epsilon(1e-12));
  CHECK(l.g_loss == doctest::Approx(bce_with_logits(zf, 1.0)).epsilon(1e-12));

  // d_loss parameter gradients vs central differences. The critic is
  // piecewise smooth; a sample whose step straddles an activation kink shows
  // up as step-halving disagreement and is skipped deterministically.
  const std::vector<ParamRef> prefs = disc.params();
  for (const ParamRef& p : prefs) std::fill(p.g, p.g + p.n, 0.0f);
  loss_adversarial(disc, a, ap, 3, nullptr, true);

  const double h = 1.0 / 64.0;
  int accepted = 0;
  for (size_t pi = 0; pi < prefs.size(); pi += 2) {
    const ParamRef& p = prefs[pi];
    const Eigen::Index j = Eigen::Index(pi * 13 + 5) % p.n;
    const float keep = p.w[j];
    auto fd_at = [&](double step) {
      p.w[j] = keep + float(step);
      const double lp = loss_adversarial(disc, a, ap, 3).d_loss;
      p.w[j] = keep - float(step);
      const double lm = loss_adversarial(disc, a, ap, 3).d_loss;
      p.w[j] = keep;
      return (lp - lm) / (2.0 * step);
    };
    const double fd = fd_at(h);
    const double fd_half = fd_at(h / 2.0);
    if (std::abs(fd - fd_half) > 2e-4 * std::max(1.0, std::abs(fd))) continue;
    INFO("param block " << pi << " element " << j);
    CHECK(rel_gap(fd, double(p.g[j])) < 1e-4);
    ++accepted;
  }
  CHECK(accepted >= 4);

  // Candidate-image gradient vs finite differences.
  Tensor g_ap;
  loss_adversarial(disc, a, ap, 3, &g_ap, false);
  REQUIRE(g_ap.same_shape(ap));
  CHECK(double(g_ap.v.cast<double>().cwiseAbs().maxCoeff()) > 0.0);
  Tensor ap_pert = ap;
  for (Eigen::Index i = 0; i < ap_pert.size(); i += 19) {
    const float keep = ap_pert.v[i];
    ap_pert.v[i] = keep + float(h);
    const double lp = loss_adversarial(disc, a, ap_pert, 3).g_loss;
    ap_pert.v[i] = keep - float(h);
    const double lm = loss_adversarial(disc, a, ap_pert, 3).g_loss;
    ap_pert.v[i] = keep;
    const double fd = (lp - lm) / (2.0 * h);
    INFO("pixel element " << i);
    CHECK(rel_gap(fd, double(g_ap.v[i])) < 1e-4);
  }

  // Asking for the generator gradient must not disturb the d_loss gradients.
  std::vector<std::vector<float>> want;
  for (const ParamRef& p : prefs) {
    std::fill(p.g, p.g + p.n, 0.0f);
  }
  loss_adversarial(disc, a, ap, 3, nullptr, true);
  for (const ParamRef& p : prefs) want.emplace_back(p.g, p.g + p.n);
  for (const ParamRef& p : prefs) std::fill(p.g, p.g + p.n, 0.0f);
  Tensor g_ap2;
  loss_adversarial(disc, a, ap, 3, &g_ap2, true);
  for (size_t pi = 0; pi < prefs.size(); ++pi) {
    bool same = true;
    for (Eigen::Index j = 0; j < prefs[pi].n; ++j)
      if (prefs[pi].g[j] != want[pi][j]) same = false;
    CHECK(same);
  }
  CHECK(float((g_ap2.v - g_ap.v).cwiseAbs().maxCoeff()) == 0.0f);
}

TEST_CASE("generator gradient flows through the remapped candidate") {
  const int S = 16;
  const ImageBuffer img = smooth_image(S, S, 0.45);

  Rng rng(61);
  FlowMap flow(S, S);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      flow.dx(y, x) = float(rng.uniform(-2.3, 2.3));
      flow.dy(y, x) = float(rng.uniform(-2.3, 2.3));
    }

  const WarpResult wr = forward_warp(img, flow);
  const PlaneU8 everywhere = PlaneU8::Constant(S, S, uint8_t(1));
  const FillResult fill = fill_scattered(wr.image, wr.hit, everywhere);

  Discriminator disc(S);
  disc.init(62);

  auto g_loss_of = [&](const FlowMap& f) {
    const ImageBuffer remap = backward_remap(fill.image, f);
    Tensor a(3, S, S), ap(3, S, S);
    for (int c = 0; c < 3; ++c) {
      a.plane(c) = img.rgba[size_t(c)];
      ap.plane(c) = remap.rgba[size_t(c)];
    }
    return loss_adversarial(disc, a, ap, 1).g_loss;
  };

  // Analytic chain: critic gradient at the candidate, then the bilinear
  // sample's coordinate derivatives. The filled warp stays fixed.
  const ImageBuffer remap0 = backward_remap(fill.image, flow);
  Tensor a0(3, S, S), ap0(3, S, S);
  for (int c = 0; c < 3; ++c) {
    a0.plane(c) = img.rgba[size_t(c)];
    ap0.plane(c) = remap0.rgba[size_t(c)];
  }
  Tensor g_ap;
  loss_adversarial(disc, a0, ap0, 1, &g_ap, false);

  const double h = 1.0 / 64.0;
  double total_abs = 0.0;
  int checked = 0;
  for (int y = 1; y < S - 1; y += 3) {
    for (int x = 1; x < S - 1; x += 4) {
      const double cx = x + 0.5 + flow.dx(y, x);
      const double cy = y + 0.5 + flow.dy(y, x);
      if (!bilinear_in_bounds(S, S, cx, cy)) continue;

      double ga = 0.0;
      for (int c = 0; c < 3; ++c) {
        double dgx, dgy;
        sample_bilinear_grad(fill.image.rgba[size_t(c)], cx, cy, &dgx, &dgy);
        ga += double(g_ap.at(c, y, x)) * dgx;
      }

      // Step-halving guard: drop samples whose step crosses a bilinear cell
      // edge or an activation kink, both of which break the local slope.
      auto fd_at = [&](double step) {
        FlowMap f = flow;
        f.dx(y, x) = flow.dx(y, x) + float(step);
        const double lp = g_loss_of(f);
        f.dx(y, x) = flow.dx(y, x) - float(step);
        const double lm = g_loss_of(f);
        return (lp - lm) / (2.0 * step);
      };
      const double fd = fd_at(h);
      const double fd_half = fd_at(h / 2.0);
      if (std::abs(fd - fd_half) > 2e-4 * std::max(1.0, std::abs(fd))) continue;
      INFO("flow pixel " << x << "," << y);
      CHECK(std::abs(fd - ga) < 1e-3 * std::max(1.0, std::abs(ga)));
      total_abs += std::abs(ga);
      ++checked;
    }
  }
  CHECK(checked >= 6);
  CHECK(total_abs > 1e-6);
}

TEST_CASE("flow training learns a constant field") {
  std::vector<FlowSample> train;
  for (int i = 0; i < 6; ++i) {
    FlowSample s;
    s.image = smooth_image(32, 32, 0.13 * i);
    s.gt.reset(32, 32);
    s.gt.dx.setConstant(0.5f);
    s.gt.dy.setConstant(-0.25f);
    s.label = i % 8;
    train.push_back(std::move(s));
  }

  TrainConfig cfg;
  cfg.image_size = 32;
  cfg.levels = 3;
  cfg.base_channels = 8;
  cfg.epochs = 20;
  cfg.lr = 0.01;
  cfg.seed = 4;

  std::vector<double> losses;
  const FlowNetModel model = train_flownet(train, cfg, &losses);
  REQUIRE(losses.size() == 20);
  CHECK(losses.back() <= 0.4 * losses.front());

  // Monotone on average: the late-stage mean does not exceed the early mean.
  const double early = (losses[0] + losses[1] + losses[2]) / 3.0;
  const double late = (losses[17] + losses[18] + losses[19]) / 3.0;
  CHECK(late <= early);

  // Held out: same field, unseen texture. Zero-flow baseline is 0.375.
  const ImageBuffer held = smooth_image(32, 32, 0.9);
  const FlowMap pred = model.predict_flow(held, 2);
  FlowMap gt(32, 32);
  gt.dx.setConstant(0.5f);
  gt.dy.setConstant(-0.25f);
  const double err = loss_flow(pred, gt, Plane::Ones(32, 32));
  FlowMap zero(32, 32);
  const double baseline = loss_flow(zero, gt, Plane::Ones(32, 32));
  CHECK(baseline == doctest::Approx(0.375).epsilon(1e-12));
  CHECK(err <= 0.6 * baseline);

  CHECK_THROWS_AS(train_flownet({}, cfg), std::invalid_argument);
  TrainConfig bad = cfg;
  bad.epochs = 0;
  CHECK_THROWS_AS(train_flownet(train, bad), std::invalid_argument);
}

TEST_CASE("flow training is deterministic and writes epoch checkpoints") {
  std::vector<FlowSample> train;
  for (int i = 0; i < 4; ++i) {
    FlowSample s;
    s.image = smooth_image(16, 16, 0.21 * i);
    s.gt.reset(16, 16);
    s.gt.dx.setConstant(0.25f);
    s.label = i;
    train.push_back(std::move(s));
  }

  TrainConfig cfg;
  cfg.image_size = 16;
  cfg.levels = 2;
  cfg.base_channels = 4;
  cfg.epochs = 2;
  cfg.seed = 11;

  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };

  const std::filesystem::path dir_a = "tu_flow_ckpt_a", dir_b = "tu_flow_ckpt_b";
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
  std::filesystem::create_directories(dir_a);
  std::filesystem::create_directories(dir_b);

  train_flownet(train, cfg, nullptr, &dir_a);
  train_flownet(train, cfg, nullptr, &dir_b);

  for (int k = 1; k <= 2; ++k) {
    const std::string name = "flownet_epoch_" + std::to_string(k) + ".updm";
    const std::string a = slurp(dir_a / name);
    const std::string b = slurp(dir_b / name);
    CHECK(a.size() > 16);
    CHECK(a == b);
  }
  CHECK(slurp(dir_a / "flownet_epoch_1.updm") != slurp(dir_a / "flownet_epoch_2.updm"));

  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}

TEST_CASE("adversarial training mode runs and stays deterministic") {
  std::vector<FlowSample> train;
  for (int i = 0; i < 4; ++i) {
    FlowSample s;
    s.image = smooth_image(16, 16, 0.17 * i + 0.05);
    s.gt.reset(16, 16);
    s.gt.dx.setConstant(0.2f);
    s.gt.dy.setConstant(-0.1f);
    s.label = i;
    train.push_back(std::move(s));
  }

  TrainConfig cfg;
  cfg.image_size = 16;
  cfg.levels = 2;
  cfg.base_channels = 4;
  cfg.epochs = 2;
  cfg.lr = 1e-3;
  cfg.seed = 13;
  cfg.adversarial = true;

  std::vector<double> la, lb;
  FlowNetModel m1 = train_flownet(train, cfg, &la);
  FlowNetModel m2 = train_flownet(train, cfg, &lb);
  REQUIRE(la.size() == 2);
  for (double l : la) CHECK(std::isfinite(l));
  CHECK(la == lb);

  const FlowMap f1 = m1.predict_flow(train[0].image, 0);
  const FlowMap f2 = m2.predict_flow(train[0].image, 0);
  CHECK(float((f1.dx - f2.dx).abs().maxCoeff()) == 0.0f);
  CHECK(f1.dx.isFinite().all());
}

TEST_CASE("completion training fills holes and preserves covered pixels") {
  const float kR = 0.75f, kG = 0.35f, kB = 0.55f;
  auto make_sample = [&](int hole_x, int hole_y) {
    CompletionSample s;
    s.target.reset(32, 32, true);
    s.target.rgba[0].setConstant(kR);
    s.target.rgba[1].setConstant(kG);
    s.target.rgba[2].setConstant(kB);
    s.target.rgba[3].setOnes();
    s.target.mask.setOnes();
    s.hit = Plane::Ones(32, 32);
    for (int y = hole_y; y < hole_y + 8; ++y)
      for (int x = hole_x; x < hole_x + 8; ++x) s.hit(y, x) = 0.0f;
    s.warped = s.target;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        if (s.hit(y, x) <= 0.5f)
          for (int c = 0; c < 3; ++c) s.warped.rgba[size_t(c)](y, x) = 0.5f;
    s.region = Plane::Ones(32, 32);
    return s;
  };

  std::vector<CompletionSample> train;
  for (int i = 0; i < 6; ++i) {
    auto s = make_sample(3 + 3 * i, 20 - 2 * i);
    s.label = i;
    train.push_back(std::move(s));
  }

  TrainConfig cfg;
  cfg.image_size = 32;
  cfg.levels = 3;
  cfg.base_channels = 8;
  cfg.epochs = 20;
  cfg.lr = 0.01;
  cfg.seed = 6;

  std::vector<double> losses;
  const CompletionModel model = train_completion(train, cfg, &losses);
  REQUIRE(losses.size() == 20);
  CHECK(losses.back() <= 0.4 * losses.front());

  // Held out hole position.
  const CompletionSample held = make_sample(18, 4);
  const ImageBuffer out = model.complete(held.warped, held.hit, 3);

  double novel_err = 0.0, keep_err = 0.0;
  long n_novel = 0, n_keep = 0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      double e_t = 0.0, e_w = 0.0;
      for (int c = 0; c < 3; ++c) {
        e_t += std::abs(double(out.rgba[size_t(c)](y, x)) - held.target.rgba[size_t(c)](y, x));
        e_w += std::abs(double(out.rgba[size_t(c)](y, x)) - held.warped.rgba[size_t(c)](y, x));
      }
      if (held.hit(y, x) <= 0.5f) {
        novel_err += e_t / 3.0;
        ++n_novel;
      } else {
        keep_err += e_w / 3.0;
        ++n_keep;
      }
    }
  novel_err /= double(n_novel);
  keep_err /= double(n_keep);

  // Untrained reference error in the hole is |0.5 - target| ~ 0.15.
  CHECK(novel_err <= 0.05);
  CHECK(keep_err <= 5.0 / 255.0);

  CHECK_THROWS_AS(train_completion({}, cfg), std::invalid_argument);
}

TEST_CASE("undistort mechanics with an identity oracle flow") {
  const int S = 64;
  ImageBuffer img = smooth_image(S, S, 0.31);
  img.mask.setZero();
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const double dx = x + 0.5 - 32.0, dy = y + 0.5 - 32.0;
      if (dx * dx + dy * dy <= 24.0 * 24.0) img.mask(y, x) = 1.0f;
    }
  img.rgba[3] = img.mask;

  CompletionModel comp(32, 3, 8);
  comp.init(1);
  zero_all(comp.params());

  UndistortModels models;
  models.completion = &comp;

  FlowMap oracle(S, S);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x)
      oracle.valid(y, x) = img.mask(y, x) > 0.5f ? kFlowValid : kFlowInvalid;

  const double kd = 160.0;
  const UndistortResult r = undistort(img, models, &oracle, &kd);

  CHECK(r.distance_cm == 160.0);
  CHECK(r.label.index == 6);
  CHECK_FALSE(r.label.clamped);
  CHECK(float(r.flow.dx.abs().maxCoeff()) == 0.0f);

  CHECK(masked_mean_abs_diff(r.warped, img, img.mask) <= 1e-6);

  const Plane interior = erode_disk_mask(img.mask, 6);
  REQUIRE(double(interior.sum()) > 200.0);
  CHECK(masked_mean_abs_diff(r.blended, img, interior) <= 5e-3);

  // Determinism: a second run reproduces every plane bit for bit.
  const UndistortResult r2 = undistort(img, models, &oracle, &kd);
  CHECK(float((r2.blended.rgba[0] - r.blended.rgba[0]).abs().maxCoeff()) == 0.0f);
  CHECK(float((r2.warped.rgba[1] - r.warped.rgba[1]).abs().maxCoeff()) == 0.0f);
  CHECK(float((r2.flow.dx - r.flow.dx).abs().maxCoeff()) == 0.0f);
}

TEST_CASE("undistort reproduces an integer-shifted view under an oracle flow") {
  const int S = 128;
  const ImageBuffer img = disk_image(S, 64.0, 64.0, 40.0);
  const int tx = 7, ty = -5;

  // Analytic target: the same content translated by (tx, ty).
  ImageBuffer truth;
  truth.reset(S, S, true);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const int sx = x - tx, sy = y - ty;
      if (sx < 0 || sy < 0 || sx >= S || sy >= S) continue;
      for (int c = 0; c < 4; ++c) truth.rgba[size_t(c)](y, x) = img.rgba[size_t(c)](sy, sx);
      truth.mask(y, x) = img.mask(sy, sx);
    }

  FlowMap oracle(S, S);
  oracle.dx.setConstant(float(tx));
  oracle.dy.setConstant(float(ty));
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x)
      oracle.valid(y, x) = img.mask(y, x) > 0.5f ? kFlowValid : kFlowInvalid;

  CompletionModel comp(32, 3, 8);
  comp.init(2);
  zero_all(comp.params());
  UndistortModels models;
  models.completion = &comp;

  const double kd = 30.0;
  const UndistortResult r = undistort(img, models, &oracle, &kd, &truth.mask);

  CHECK(r.label.index == 2);
  const Plane interior = erode_disk_mask(truth.mask, 3);
  REQUIRE(double(interior.sum()) > 1000.0);
  CHECK(masked_mean_abs_diff(r.blended, truth, interior) <= 1e-4);
  CHECK(masked_psnr(r.blended, truth, interior) >= 50.0);
  CHECK(float((r.blended.mask - truth.mask).abs().maxCoeff()) == 0.0f);
}

TEST_CASE("undistort is resolution-consistent under matching oracle flows") {
  const ImageBuffer img256 = disk_image(256, 128.0, 128.0, 80.0);
  const ImageBuffer img128 = resize_area(img256, 128, 128);

  auto run = [](const ImageBuffer& img, int t) {
    const int S = img.width;
    FlowMap oracle(S, S);
    oracle.dx.setConstant(float(t));
    oracle.dy.setConstant(float(-t));
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x)
        oracle.valid(y, x) =
            (img.has_mask() && img.mask(y, x) > 0.5f) ? kFlowValid : kFlowInvalid;
    CompletionModel comp(32, 3, 8);
    comp.init(3);
    zero_all(comp.params());
    UndistortModels models;
    models.completion = &comp;
    const double kd = 50.0;
    return undistort(img, models, &oracle, &kd);
  };

  const UndistortResult big = run(img256, 6);
  const UndistortResult small = run(img128, 3);

  const ImageBuffer big_down = resize_area(big.blended, 128, 128);
  Plane common = Plane::Zero(128, 128);
  for (int y = 0; y < 128; ++y)
    for (int x = 0; x < 128; ++x)
      common(y, x) =
          (big_down.mask(y, x) > 0.9f && small.blended.mask(y, x) > 0.9f) ? 1.0f : 0.0f;
  const Plane interior = erode_disk_mask(common, 2);
  REQUIRE(double(interior.sum()) > 1000.0);
  CHECK(masked_mean_abs_diff(big_down, small.blended, interior) <= 4.0 / 255.0);
}

TEST_CASE("undistort stage failures carry the stage name") {
  const ImageBuffer img = smooth_image(32, 32, 0.2);
  CompletionModel comp(32, 3, 8);
  comp.init(4);
  UndistortModels with_comp;
  with_comp.completion = &comp;

  FlowMap oracle(32, 32);
  const double kd = 40.0;

  UndistortModels none;
  expect_stage([&] { undistort(img, none, &oracle, &kd); }, "undistort complete:");
  expect_stage([&] { undistort(img, none, &oracle, nullptr); }, "undistort estimate:");
  const double bad_d = -5.0;
  expect_stage([&] { undistort(img, with_comp, &oracle, &bad_d); }, "undistort estimate:");
  expect_stage([&] { undistort(img, with_comp, nullptr, &kd); }, "undistort flow:");
  FlowMap wrong(16, 16);
  expect_stage([&] { undistort(img, with_comp, &wrong, &kd); }, "undistort flow:");
  FlowMap invalid(32, 32);
  invalid.valid.setConstant(kFlowInvalid);
  expect_stage([&] { undistort(img, with_comp, &invalid, &kd); }, "undistort warp:");
}

TEST_CASE("sample loaders read manifests and resample to the training size") {
  const std::filesystem::path dir = "tu_loader_tmp";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);

  const ImageBuffer near = disk_image(24, 12.0, 12.0, 9.0);
  ImageBuffer far = disk_image(24, 14.0, 12.0, 9.0);
  write_png(dir / "n0.png", near);
  write_png(dir / "f0.png", far);

  FlowMap flow(24, 24);
  flow.dx.setConstant(2.0f);
  flow.dy.setConstant(0.0f);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x)
      flow.valid(y, x) = near.mask(y, x) > 0.5f ? kFlowValid : kFlowInvalid;
  write_flow(dir / "p0.flw", flow);

  KeyValueFile manifest;
  manifest.kind = "dataset";
  Record ok;
  ok.set("id", "pair0000");
  ok.set("status", "ok");
  ok.set("near_png", "n0.png");
  ok.set("far_png", "f0.png");
  ok.set("flow", "p0.flw");
  ok.set_long("label", 3);
  Record rejected;
  rejected.set("id", "pair0001");
  rejected.set("status", "rejected");
  rejected.set("reason", "landmark_occluded");
  manifest.records = {ok, rejected};

  const auto flows = load_flow_samples(manifest, dir, 16);
  REQUIRE(flows.size() == 1);
  CHECK(flows[0].image.width == 16);
  CHECK(flows[0].image.has_mask());
  CHECK(flows[0].gt.width == 16);
  CHECK(flows[0].label == 3);
  // Displacements rescale with the geometry: 2 px at 24 becomes 4/3 px at 16.
  bool any_valid = false;
  for (int y = 0; y < 16 && !any_valid; ++y)
    for (int x = 0; x < 16 && !any_valid; ++x)
      if (flows[0].gt.is_valid(x, y)) {
        CHECK(flows[0].gt.dx(y, x) == doctest::Approx(2.0 * 16.0 / 24.0).epsilon(1e-5));
        any_valid = true;
      }
  CHECK(any_valid);

  const auto comps = make_completion_samples(manifest, dir, 16);
  REQUIRE(comps.size() == 1);
  CHECK(comps[0].warped.width == 16);
  CHECK(comps[0].target.width == 16);
  CHECK(comps[0].hit.rows() == 16);
  CHECK(comps[0].region.rows() == 16);
  CHECK(comps[0].label == 3);
  CHECK(double(comps[0].hit.sum()) > 0.0);
  // The far-view coverage bounds the evaluation region.
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      CHECK(comps[0].region(y, x) == (comps[0].target.mask(y, x) > 0.5f ? 1.0f : 0.0f));
  CHECK(float((comps[0].warped.mask - comps[0].region).abs().maxCoeff()) == 0.0f);

  CHECK_THROWS_AS(load_flow_samples(manifest, dir, 8), std::invalid_argument);
  CHECK_THROWS_AS(make_completion_samples(manifest, dir, 8), std::invalid_argument);

  std::filesystem::remove_all(dir);
}
