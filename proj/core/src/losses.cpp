#include "cmudrn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "cmudrn/errors.hpp"

namespace cmudrn::losses {

namespace {

void check_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a.n != b.n) throw ShapeError(op, "n", a.n, b.n);
  if (a.c != b.c) throw ShapeError(op, "c", a.c, b.c);
  if (a.h != b.h) throw ShapeError(op, "h", a.h, b.h);
  if (a.w != b.w) throw ShapeError(op, "w", a.w, b.w);
}

// Separable "valid" correlation of an h x w plane with taps (outer product).
void filter_valid(const double* src, std::size_t h, std::size_t w, const std::vector<double>& taps, double* dst,
                  std::vector<double>& scratch) {
  const std::size_t s = taps.size();
  const std::size_t oh = h - s + 1;
  const std::size_t ow = w - s + 1;
  scratch.assign(h * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < s; ++k) acc += taps[k] * src[y * w + x + k];
      scratch[y * ow + x] = acc;
    }
  }
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < s; ++k) acc += taps[k] * scratch[(y + k) * ow + x];
      dst[y * ow + x] = acc;
    }
  }
}

// Adjoint of filter_valid: scatters an oh x ow map back onto h x w.
void filter_adjoint(const double* src, std::size_t h, std::size_t w, const std::vector<double>& taps, double* dst,
                    std::vector<double>& scratch) {
  const std::size_t s = taps.size();
  const std::size_t oh = h - s + 1;
  const std::size_t ow = w - s + 1;
  scratch.assign(h * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t k = 0; k < s; ++k)
      for (std::size_t x = 0; x < ow; ++x) scratch[(y + k) * ow + x] += taps[k] * src[y * ow + x];
  std::fill(dst, dst + h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t k = 0; k < s; ++k) dst[y * w + x + k] += taps[k] * scratch[y * ow + x];
}

Tensor dissimilarity(const Tensor& x, const Tensor& y, const SsimConfig& cfg) {
  return sub(Tensor::scalar(1.0), ssim(x, y, cfg));
}

Tensor accumulate(Tensor total, Tensor term) {
  if (!total.defined()) return term;
  return add(total, term);
}

}  // namespace

void SsimConfig::validate() const {
  if (window < 3 || window % 2 == 0) throw std::invalid_argument("SSIM window side must be odd and >= 3");
  if (!(sigma > 0.0)) throw std::invalid_argument("SSIM sigma must be positive");
  if (!(c1() > 0.0) || !(c2() > 0.0)) throw std::invalid_argument("SSIM constants c1, c2 must be positive");
}

std::vector<double> gaussian_taps(std::size_t side, double sigma) {
  std::vector<double> taps(side);
  const double centre = static_cast<double>(side / 2);
  double total = 0.0;
  for (std::size_t i = 0; i < side; ++i) {
    const double d = static_cast<double>(i) - centre;
    taps[i] = std::exp(-(d * d) / (2.0 * sigma * sigma));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

Tensor ssim(const Tensor& x, const Tensor& y, const SsimConfig& cfg) {
  cfg.validate();
  const Shape& s = x.shape();
  check_same_shape("ssim", s, y.shape());

  std::size_t side = std::min({cfg.window, s.h, s.w});
  if (side % 2 == 0) --side;
  const std::vector<double> taps = gaussian_taps(side, cfg.sigma);
  const std::size_t oh = s.h - side + 1;
  const std::size_t ow = s.w - side + 1;
  const std::size_t positions = oh * ow;
  const std::size_t planes = s.n * s.c;
  const double c1 = cfg.c1();
  const double c2 = cfg.c2();

  const auto xv = x.values();
  const auto yv = y.values();

  // Per valid position: dS/dmu_x, dS/dmu_y, dS/dE[xx] (= dS/dE[yy]), dS/dE[xy].
  struct Partials {
    std::vector<double> mu_x, mu_y, e_sq, e_xy;
  };
  Partials partials{std::vector<double>(planes * positions), std::vector<double>(planes * positions),
                    std::vector<double>(planes * positions), std::vector<double>(planes * positions)};

  std::vector<double> xx(s.plane()), yy(s.plane()), xy(s.plane()), scratch;
  std::vector<double> mu_x(positions), mu_y(positions), e_xx(positions), e_yy(positions), e_xy(positions);
  double total = 0.0;
  for (std::size_t p = 0; p < planes; ++p) {
    const double* px = xv.data() + p * s.plane();
    const double* py = yv.data() + p * s.plane();
    for (std::size_t i = 0; i < s.plane(); ++i) {
      xx[i] = px[i] * px[i];
      yy[i] = py[i] * py[i];
      xy[i] = px[i] * py[i];
    }
    filter_valid(px, s.h, s.w, taps, mu_x.data(), scratch);
    filter_valid(py, s.h, s.w, taps, mu_y.data(), scratch);
    filter_valid(xx.data(), s.h, s.w, taps, e_xx.data(), scratch);
    filter_valid(yy.data(), s.h, s.w, taps, e_yy.data(), scratch);
    filter_valid(xy.data(), s.h, s.w, taps, e_xy.data(), scratch);
    for (std::size_t i = 0; i < positions; ++i) {
      const double mx = mu_x[i];
      const double my = mu_y[i];
      const double sxx = e_xx[i] - mx * mx;
      const double syy = e_yy[i] - my * my;
      const double sxy = e_xy[i] - mx * my;
      const double a1 = 2.0 * mx * my + c1;
      const double a2 = 2.0 * sxy + c2;
      const double b1 = mx * mx + my * my + c1;
      const double b2 = sxx + syy + c2;
      const double num = a1 * a2;
      const double den = b1 * b2;
      const double value = num / den;
      total += value;

      const std::size_t k = p * positions + i;
      partials.mu_x[k] = (2.0 * my * (a2 - a1) - value * 2.0 * mx * (b2 - b1)) / den;
      partials.mu_y[k] = (2.0 * mx * (a2 - a1) - value * 2.0 * my * (b2 - b1)) / den;
      partials.e_sq[k] = -value / b2;
      partials.e_xy[k] = 2.0 * a1 / den;
    }
  }
  const double count = static_cast<double>(planes * positions);

  return Tensor::make_result(
      {1, 1, 1, 1}, {total / count}, {x, y},
      [x, y, taps, partials = std::move(partials), count, s, positions](std::span<const double> g,
                                                                        std::span<const std::span<double>> gi) {
        const double scale_by = g[0] / count;
        const auto xv = x.values();
        const auto yv = y.values();
        std::vector<double> scratch, a_mx(s.plane()), a_my(s.plane()), a_sq(s.plane()), a_xy(s.plane());
        for (std::size_t p = 0; p < s.n * s.c; ++p) {
          const std::size_t base = p * positions;
          filter_adjoint(partials.mu_x.data() + base, s.h, s.w, taps, a_mx.data(), scratch);
          filter_adjoint(partials.mu_y.data() + base, s.h, s.w, taps, a_my.data(), scratch);
          filter_adjoint(partials.e_sq.data() + base, s.h, s.w, taps, a_sq.data(), scratch);
          filter_adjoint(partials.e_xy.data() + base, s.h, s.w, taps, a_xy.data(), scratch);
          const double* px = xv.data() + p * s.plane();
          const double* py = yv.data() + p * s.plane();
          if (!gi[0].empty()) {
            double* gx = gi[0].data() + p * s.plane();
            for (std::size_t i = 0; i < s.plane(); ++i)
              gx[i] += scale_by * (a_mx[i] + 2.0 * px[i] * a_sq[i] + py[i] * a_xy[i]);
          }
          if (!gi[1].empty()) {
            double* gy = gi[1].data() + p * s.plane();
            for (std::size_t i = 0; i < s.plane(); ++i)
              gy[i] += scale_by * (a_my[i] + 2.0 * py[i] * a_sq[i] + px[i] * a_xy[i]);
          }
        }
      });
}

Tensor local_loss(const Tensor& pred, const Tensor& gt, const SsimConfig& cfg, LossTerms terms) {
  check_same_shape("local_loss", pred.shape(), gt.shape());
  Tensor total;
  if (terms.ssim) total = accumulate(total, dissimilarity(pred, gt, cfg));
  if (terms.frobenius) {
    const double inv_batch = 1.0 / static_cast<double>(pred.shape().n);
    total = accumulate(total, scale(frobenius_sq(sub(pred, gt)), inv_batch));
  }
  return total.defined() ? total : Tensor::scalar(0.0);
}

Tensor recur_loss(std::span<const Tensor> intermediates, const Tensor& gt, const SsimConfig& cfg, LossTerms terms) {
  if (intermediates.empty()) throw std::invalid_argument("recur_loss: no intermediate estimates");
  Tensor total;
  for (const Tensor& x : intermediates) total = accumulate(total, local_loss(x, gt, cfg, terms));
  return total;
}

Tensor global_loss(const Tensor& fused, const Tensor& gt, const SsimConfig& cfg, LossTerms terms) {
  check_same_shape("global_loss", fused.shape(), gt.shape());
  Tensor total;
  if (terms.ssim) total = accumulate(total, dissimilarity(fused, gt, cfg));
  if (terms.frobenius) total = accumulate(total, mean(sample_frobenius_norm(sub(fused, gt))));
  return total.defined() ? total : Tensor::scalar(0.0);
}

double psnr(std::span<const double> pred, std::span<const double> gt, double max_val) {
  if (pred.size() != gt.size()) throw ShapeError("psnr", "numel", gt.size(), pred.size());
  if (pred.empty()) throw std::invalid_argument("psnr: empty image");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - gt[i];
    total += d * d;
  }
  const double mse = total / static_cast<double>(pred.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / mse);
}

LossReport& LossReport::operator+=(const LossReport& o) {
  local_rain += o.local_rain;
  local_snow += o.local_snow;
  recur_rain += o.recur_rain;
  recur_snow += o.recur_snow;
  global += o.global;
  combined += o.combined;
  return *this;
}

LossReport& LossReport::operator/=(double k) {
  local_rain /= k;
  local_snow /= k;
  recur_rain /= k;
  recur_snow /= k;
  global /= k;
  combined /= k;
  return *this;
}

}  // namespace cmudrn::losses
