#pragma once

// Shared helpers for the unit and acceptance tests: random tensors, a
// central-difference gradient checker and small file utilities.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "cmudrn/tensor.hpp"

namespace cmudrn::testing {

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape.numel());
  for (double& x : v) x = dist(rng);
  return Tensor::from_values(shape, std::move(v), requires_grad);
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "<leaf>[<index>]: analytic vs numeric"
};

/// Compares the analytic gradient of `loss()` with respect to each leaf in
/// `leaves` against central differences. The relative error of one entry is
/// |a - n| / max(|a|, |n|, floor). Each entry is probed at steps h, h/10
/// and 10h and the smallest error kept: h/10 retries a probe that straddled
/// a ReLU kink, 10h lifts tiny gradients of a large loss above cancellation
/// noise. At most `max_per_leaf`
/// entries of each leaf are probed (evenly strided).
inline GradCheck check_gradients(const std::function<Tensor()>& loss, std::vector<Tensor> leaves, double h = 1e-5,
                                 double floor = 1e-6, std::size_t max_per_leaf = 64) {
  for (auto& t : leaves) t.set_requires_grad(true);
  Tensor l = loss();
  backward(l);
  std::vector<std::vector<double>> analytic;
  for (auto& t : leaves) analytic.emplace_back(t.grad().begin(), t.grad().end());

  GradCheck out;
  NoGradGuard guard;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto vals = leaves[li].mutable_values();
    const std::size_t stride = std::max<std::size_t>(1, vals.size() / max_per_leaf);
    for (std::size_t i = 0; i < vals.size(); i += stride) {
      const double orig = vals[i];
      const double a = analytic[li][i];
      double rel = std::numeric_limits<double>::infinity();
      double numeric = 0.0;
      for (double step : {h, h / 10.0, h * 10.0}) {
        vals[i] = orig + step;
        const double up = loss().item();
        vals[i] = orig - step;
        const double down = loss().item();
        vals[i] = orig;
        const double n = (up - down) / (2.0 * step);
        const double r = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
        if (r < rel) {
          rel = r;
          numeric = n;
        }
      }
      ++out.checked;
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = "leaf " + std::to_string(li) + "[" + std::to_string(i) + "]: analytic " + std::to_string(a) +
                    " vs numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

/// Direct nested-loop cross-correlation with zero padding and stride 1.
inline std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, const ConvSpec& spec) {
  const Shape in = x.shape();
  const Shape out_shape = spec.output_shape(in);
  std::vector<double> out(out_shape.numel());
  const auto xv = x.values();
  const auto wv = w.values();
  const auto bv = b.values();
  const auto pad = static_cast<long>(spec.padding);
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t o = 0; o < spec.out_channels; ++o)
      for (std::size_t oy = 0; oy < out_shape.h; ++oy)
        for (std::size_t ox = 0; ox < out_shape.w; ++ox) {
          double acc = bv[o];
          for (std::size_t c = 0; c < spec.in_channels; ++c)
            for (std::size_t ky = 0; ky < spec.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
                const long iy = static_cast<long>(oy + ky) - pad;
                const long ix = static_cast<long>(ox + kx) - pad;
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(in.h) || ix >= static_cast<long>(in.w)) continue;
                acc += xv[in.index(n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix))] *
                       wv[((o * spec.in_channels + c) * spec.kernel_h + ky) * spec.kernel_w + kx];
              }
          out[out_shape.index(n, o, oy, ox)] = acc;
        }
  return out;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("cmudrn_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

}  // namespace cmudrn::testing
