#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "cmudrn/errors.hpp"
#include "cmudrn/losses.hpp"
#include "support.hpp"

using namespace cmudrn;
using namespace cmudrn::losses;
using cmudrn::testing::check_gradients;
using cmudrn::testing::random_tensor;

namespace {

// SSIM straight from its definition: 2-D Gaussian weights, weighted means,
// variances and covariance as E[(x - mu)^2] at each valid window position.
double naive_ssim(const Tensor& x, const Tensor& y, const SsimConfig& cfg) {
  const Shape s = x.shape();
  std::size_t side = std::min({cfg.window, s.h, s.w});
  if (side % 2 == 0) --side;
  std::vector<double> g(side);
  double gs = 0.0;
  for (std::size_t i = 0; i < side; ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(side / 2);
    g[i] = std::exp(-d * d / (2 * cfg.sigma * cfg.sigma));
    gs += g[i];
  }
  const double c1 = std::pow(cfg.k1 * cfg.dynamic_range, 2), c2 = std::pow(cfg.k2 * cfg.dynamic_range, 2);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t oy = 0; oy + side <= s.h; ++oy)
        for (std::size_t ox = 0; ox + side <= s.w; ++ox) {
          double mx = 0, my = 0;
          for (std::size_t i = 0; i < side; ++i)
            for (std::size_t j = 0; j < side; ++j) {
              const double wgt = g[i] * g[j] / (gs * gs);
              mx += wgt * x.at(n, c, oy + i, ox + j);
              my += wgt * y.at(n, c, oy + i, ox + j);
            }
          double vx = 0, vy = 0, cxy = 0;
          for (std::size_t i = 0; i < side; ++i)
            for (std::size_t j = 0; j < side; ++j) {
              const double wgt = g[i] * g[j] / (gs * gs);
              const double dx = x.at(n, c, oy + i, ox + j) - mx;
              const double dy = y.at(n, c, oy + i, ox + j) - my;
              vx += wgt * dx * dx;
              vy += wgt * dy * dy;
              cxy += wgt * dx * dy;
            }
          total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
          ++count;
        }
  return total / static_cast<double>(count);
}

double frob_sq(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += std::pow(a.values()[i] - b.values()[i], 2);
  return s;
}

double per_sample_norm_mean(const Tensor& a, const Tensor& b) {
  const Shape s = a.shape();
  const std::size_t per = s.c * s.h * s.w;
  double total = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    double acc = 0;
    for (std::size_t i = 0; i < per; ++i) acc += std::pow(a.values()[n * per + i] - b.values()[n * per + i], 2);
    total += std::sqrt(acc);
  }
  return total / static_cast<double>(s.n);
}

}  // namespace

TEST(Ssim, SelfSimilarityIsExactlyOne) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Tensor x = random_tensor({2, 3, 16, 16}, seed, 0, 1);
    EXPECT_EQ(ssim(x, x).item(), 1.0);
    EXPECT_EQ(sub(Tensor::scalar(1.0), ssim(x, x)).item(), 0.0);
  }
  Tensor small = random_tensor({1, 3, 8, 8}, 4, 0, 1);
  EXPECT_EQ(ssim(small, small).item(), 1.0);
}

TEST(Ssim, ConstantImagesMatchClosedForm) {
  const SsimConfig cfg;
  Tensor zero = Tensor::zeros({1, 3, 16, 16});
  Tensor one = Tensor::full({1, 3, 16, 16}, 1.0);
  // mu_x = 0, mu_y = 1, all (co)variances 0: SSIM = c1 / (1 + c1).
  const double c1 = 0.01 * 0.01;
  EXPECT_NEAR(ssim(zero, one, cfg).item(), c1 / (1.0 + c1), 1e-12);

  Tensor a = Tensor::full({1, 1, 12, 12}, 0.3);
  Tensor b = Tensor::full({1, 1, 12, 12}, 0.7);
  const double want = (2 * 0.3 * 0.7 + c1) / (0.09 + 0.49 + c1);
  EXPECT_NEAR(ssim(a, b, cfg).item(), want, 1e-12);
}

TEST(Ssim, MatchesDefinitionOracle) {
  for (const auto& shape : {Shape{1, 3, 16, 16}, Shape{2, 2, 13, 20}, Shape{1, 3, 8, 8}}) {
    Tensor x = random_tensor(shape, shape.h, 0, 1);
    Tensor y = random_tensor(shape, shape.w + 100, 0, 1);
    EXPECT_NEAR(ssim(x, y).item(), naive_ssim(x, y, {}), 1e-9);
    SsimConfig tight{5, 0.8, 0.02, 0.05, 1.0};
    EXPECT_NEAR(ssim(x, y, tight).item(), naive_ssim(x, y, tight), 1e-9);
  }
}

TEST(Ssim, SymmetricAndBounded) {
  Tensor x = random_tensor({2, 3, 16, 16}, 10, 0, 1);
  Tensor y = random_tensor({2, 3, 16, 16}, 11, 0, 1);
  const double xy = ssim(x, y).item();
  EXPECT_NEAR(xy, ssim(y, x).item(), 1e-9);
  EXPECT_LT(xy, 1.0);
  EXPECT_GT(xy, -1.0);
}

TEST(Ssim, ErrorsAndConfig) {
  EXPECT_THROW(ssim(Tensor::zeros({1, 3, 8, 8}), Tensor::zeros({1, 3, 8, 9})), ShapeError);
  EXPECT_THROW((SsimConfig{4}.validate()), std::invalid_argument);
  EXPECT_THROW((SsimConfig{11, 0.0}.validate()), std::invalid_argument);
  EXPECT_THROW((SsimConfig{11, 1.5, 0.0}.validate()), std::invalid_argument);
  const auto taps = gaussian_taps(11, 1.5);
  double s = 0;
  for (double t : taps) s += t;
  EXPECT_NEAR(s, 1.0, 1e-15);
  EXPECT_EQ(taps[0], taps[10]);
}

TEST(Ssim, GradientsMatchFiniteDifferences) {
  Tensor x = random_tensor({1, 2, 12, 12}, 20, 0, 1);
  Tensor y = random_tensor({1, 2, 12, 12}, 21, 0, 1);
  const auto r = check_gradients([&] { return ssim(x, y); }, {x, y});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  Tensor a = random_tensor({2, 3, 8, 8}, 22, 0, 1);
  Tensor b = random_tensor({2, 3, 8, 8}, 23, 0, 1);
  const auto r2 = check_gradients([&] { return ssim(a, b, {5, 1.0}); }, {a, b});
  EXPECT_LT(r2.max_rel_error, 1e-4) << r2.worst;
}

TEST(LocalLoss, ZeroAtTruth) {
  Tensor gt = random_tensor({2, 3, 16, 16}, 30, 0, 1);
  EXPECT_EQ(local_loss(gt, gt).item(), 0.0);
}

TEST(LocalLoss, SinglePixelPerturbation) {
  Tensor gt = random_tensor({4, 3, 16, 16}, 31, 0, 1);
  Tensor pred = gt.detach();
  const double eps = 0.25;
  pred.mutable_values()[123] += eps;
  EXPECT_NEAR(local_loss(pred, gt, {}, {false, true}).item(), eps * eps / 4.0, 1e-15);
}

TEST(LocalLoss, MatchesDefinitionOracle) {
  Tensor pred = random_tensor({2, 3, 16, 16}, 32, 0, 1);
  Tensor gt = random_tensor({2, 3, 16, 16}, 33, 0, 1);
  const double want = (1.0 - naive_ssim(pred, gt, {})) + frob_sq(pred, gt) / 2.0;
  EXPECT_NEAR(local_loss(pred, gt).item(), want, 1e-9);
  EXPECT_NEAR(local_loss(pred, gt, {}, {true, false}).item(), 1.0 - naive_ssim(pred, gt, {}), 1e-9);
  EXPECT_EQ(local_loss(pred, gt, {}, {false, false}).item(), 0.0);
}

TEST(RecurLoss, Definitions) {
  Tensor gt = random_tensor({2, 3, 12, 12}, 40, 0, 1);
  const std::vector<Tensor> same{gt, gt, gt};
  EXPECT_EQ(recur_loss(same, gt).item(), 0.0);

  Tensor x1 = random_tensor({2, 3, 12, 12}, 41, 0, 1);
  const std::vector<Tensor> one{x1};
  EXPECT_EQ(recur_loss(one, gt).item(), local_loss(x1, gt).item());

  Tensor x2 = random_tensor({2, 3, 12, 12}, 42, 0, 1);
  Tensor x3 = random_tensor({2, 3, 12, 12}, 43, 0, 1);
  const std::vector<Tensor> three{x1, x2, x3};
  const double want = local_loss(x1, gt).item() + local_loss(x2, gt).item() + local_loss(x3, gt).item();
  EXPECT_NEAR(recur_loss(three, gt).item(), want, 1e-12);

  EXPECT_THROW(recur_loss(std::vector<Tensor>{}, gt), std::invalid_argument);
}

TEST(GlobalLoss, UnsquaredNorm) {
  Tensor gt = random_tensor({2, 3, 16, 16}, 50, 0, 1);
  EXPECT_EQ(global_loss(gt, gt).item(), 0.0);

  Tensor zero = Tensor::zeros({1, 1, 1, 2});
  Tensor diff = Tensor::from_values({1, 1, 1, 2}, {3, 4});
  EXPECT_DOUBLE_EQ(global_loss(diff, zero, {}, {false, true}).item(), 5.0);

  Tensor fused = random_tensor({3, 3, 16, 16}, 51, 0, 1);
  Tensor gt3 = random_tensor({3, 3, 16, 16}, 52, 0, 1);
  const double want = (1.0 - naive_ssim(fused, gt3, {})) + per_sample_norm_mean(fused, gt3);
  EXPECT_NEAR(global_loss(fused, gt3).item(), want, 1e-9);
}

TEST(Losses, NonNegativeOnRandomPairs) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Tensor a = random_tensor({1, 3, 12, 12}, seed, 0, 1);
    Tensor b = random_tensor({1, 3, 12, 12}, seed + 100, 0, 1);
    EXPECT_GE(local_loss(a, b).item(), 0.0);
    EXPECT_GE(global_loss(a, b).item(), 0.0);
    EXPECT_GE(recur_loss(std::vector<Tensor>{a, b}, b).item(), 0.0);
  }
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  Tensor p = random_tensor({2, 3, 8, 8}, 60, 0, 1);
  Tensor q = random_tensor({2, 3, 8, 8}, 61, 0, 1);
  Tensor gt = random_tensor({2, 3, 8, 8}, 62, 0, 1);
  const auto local = check_gradients([&] { return local_loss(p, gt); }, {p, gt});
  EXPECT_LT(local.max_rel_error, 1e-4) << local.worst;
  const auto global = check_gradients([&] { return global_loss(p, gt); }, {p, gt});
  EXPECT_LT(global.max_rel_error, 1e-4) << global.worst;
  const auto recur = check_gradients([&] { return recur_loss(std::vector<Tensor>{p, q}, gt); }, {p, q, gt});
  EXPECT_LT(recur.max_rel_error, 1e-4) << recur.worst;
}

TEST(Psnr, AnalyticValues) {
  std::vector<double> gt(100, 0.5), pred(100, 0.5);
  EXPECT_EQ(psnr(pred, gt), std::numeric_limits<double>::infinity());
  for (double& v : pred) v += 0.1;  // MSE 0.01
  EXPECT_NEAR(psnr(pred, gt), 20.0, 1e-9);
  for (double& v : pred) v = 0.51;  // MSE 1e-4
  EXPECT_NEAR(psnr(pred, gt), 40.0, 1e-9);
  EXPECT_NEAR(psnr(pred, gt, 255.0), 40.0 + 20.0 * std::log10(255.0), 1e-9);
}

TEST(Psnr, MonotoneInErrorScale) {
  Tensor gt = random_tensor({1, 3, 8, 8}, 70, 0, 1);
  Tensor err = random_tensor({1, 3, 8, 8}, 71, -0.05, 0.05);
  double prev = std::numeric_limits<double>::infinity();
  for (double k : {1.0, 1.5, 2.0, 4.0}) {
    std::vector<double> pred(gt.numel());
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = gt.values()[i] + k * err.values()[i];
    const double v = psnr(pred, gt.values());
    EXPECT_LT(v, prev);
    prev = v;
  }
}

TEST(LossReport, Arithmetic) {
  LossReport a{1, 2, 3, 4, 5, 15};
  LossReport b = a;
  b += a;
  b /= 2.0;
  EXPECT_EQ(b.combined, 15.0);
  EXPECT_EQ(a.local(), 3.0);
  EXPECT_EQ(a.recur(), 7.0);
}
