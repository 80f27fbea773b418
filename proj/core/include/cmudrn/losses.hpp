#pragma once

// Image-quality metrics (SSIM, PSNR) and the restoration loss terms.
//
//   local(pred, gt)  = (1 - SSIM(pred, gt)) + ||pred - gt||_F^2
//   recur(xs, gt)    = sum_r local(xs[r], gt)
//   global(fused,gt) = (1 - SSIM(fused, gt)) + ||fused - gt||_F
//
// Frobenius terms are averaged over the batch; SSIM is averaged over batch,
// channels and valid window positions. Note that the global term uses the
// unsquared norm.

#include <span>
#include <vector>

#include "cmudrn/tensor.hpp"

namespace cmudrn::losses {

struct SsimConfig {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
  /// Throws std::invalid_argument unless window is odd and >= 3, sigma > 0,
  /// c1 > 0 and c2 > 0.
  void validate() const;
};

/// Normalized 1-D Gaussian taps of length `side` (the 2-D window is their
/// outer product).
std::vector<double> gaussian_taps(std::size_t side, double sigma);

/// Mean SSIM, differentiable with respect to both arguments. When the image
/// is smaller than the window, the window shrinks to the largest odd side
/// that fits (keeping sigma).
Tensor ssim(const Tensor& x, const Tensor& y, const SsimConfig& cfg = {});

/// Which summands participate in a loss term.
struct LossTerms {
  bool ssim = true;
  bool frobenius = true;
};

Tensor local_loss(const Tensor& pred, const Tensor& gt, const SsimConfig& cfg = {}, LossTerms terms = {});
/// Throws std::invalid_argument on an empty list.
Tensor recur_loss(std::span<const Tensor> intermediates, const Tensor& gt, const SsimConfig& cfg = {},
                  LossTerms terms = {});
Tensor global_loss(const Tensor& fused, const Tensor& gt, const SsimConfig& cfg = {}, LossTerms terms = {});

/// 10 * log10(max_val^2 / MSE); +infinity when MSE == 0.
double psnr(std::span<const double> pred, std::span<const double> gt, double max_val = 1.0);

struct LossReport {
  double local_rain = 0.0;
  double local_snow = 0.0;
  double recur_rain = 0.0;
  double recur_snow = 0.0;
  double global = 0.0;
  double combined = 0.0;

  double local() const { return local_rain + local_snow; }
  double recur() const { return recur_rain + recur_snow; }
  LossReport& operator+=(const LossReport& other);
  LossReport& operator/=(double k);
};

}  // namespace cmudrn::losses
