#include "cmudrn/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "cmudrn/conv_kernels.hpp"
#include "cmudrn/errors.hpp"

namespace cmudrn {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};

}  // namespace detail

namespace {

thread_local bool t_grad_enabled = true;

void check_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a.n != b.n) throw ShapeError(op, "n", a.n, b.n);
  if (a.c != b.c) throw ShapeError(op, "c", a.c, b.c);
  if (a.h != b.h) throw ShapeError(op, "h", a.h, b.h);
  if (a.w != b.w) throw ShapeError(op, "w", a.w, b.w);
}

void check_positive(const Shape& s) {
  if (s.n == 0) throw ShapeError("tensor", "n", 1, 0);
  if (s.c == 0) throw ShapeError("tensor", "c", 1, 0);
  if (s.h == 0) throw ShapeError("tensor", "h", 1, 0);
  if (s.w == 0) throw ShapeError("tensor", "w", 1, 0);
}

}  // namespace

std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " + std::to_string(w) +
         ")";
}

Shape ConvSpec::output_shape(const Shape& input) const {
  return {input.n, out_channels, input.h + 2 * padding + 1 - kernel_h, input.w + 2 * padding + 1 - kernel_w};
}

void ConvSpec::validate() const {
  if (in_channels == 0) throw ShapeError("conv2d", "in_channels", 1, 0);
  if (out_channels == 0) throw ShapeError("conv2d", "out_channels", 1, 0);
  if (kernel_h % 2 == 0) throw ShapeError("conv2d", "kernel_h (must be odd)", kernel_h + 1, kernel_h);
  if (kernel_w % 2 == 0) throw ShapeError("conv2d", "kernel_w (must be odd)", kernel_w + 1, kernel_w);
}

// ---------------------------------------------------------------------------
// Tensor handle

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) { return full(shape, 0.0, requires_grad); }

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return from_values(shape, std::vector<double>(shape.numel(), value), requires_grad);
}

Tensor Tensor::from_values(const Shape& shape, std::vector<double> values, bool requires_grad) {
  check_positive(shape);
  if (values.size() != shape.numel()) throw ShapeError("from_values", "numel", shape.numel(), values.size());
  auto node = std::make_shared<detail::Node>();
  node->shape = shape;
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_values({1, 1, 1, 1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return node_->shape;
}

std::span<const double> Tensor::values() const {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return node_->value;
}

std::span<double> Tensor::mutable_values() {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item", "numel", 1, numel());
  return node_->value[0];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  return values()[shape().index(n, c, h, w)];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!is_leaf()) throw std::logic_error("requires_grad can only be changed on leaf tensors");
  node_->requires_grad = value;
}

bool Tensor::is_leaf() const { return node_ && !node_->backward; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.assign(node_->value.size(), 0.0);
}

void Tensor::clear_grad() {
  if (node_) std::vector<double>().swap(node_->grad);
}

Tensor Tensor::detach() const { return from_values(shape(), node_->value, false); }

Tensor Tensor::clone() const { return from_values(shape(), node_->value, node_->requires_grad); }

Tensor Tensor::make_result(const Shape& shape, std::vector<double> values, std::vector<Tensor> inputs,
                           BackwardFn fn) {
  auto node = std::make_shared<detail::Node>();
  node->shape = shape;
  node->value = std::move(values);
  if (t_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->backward = std::move(fn);
      node->parents.reserve(inputs.size());
      for (auto& t : inputs) node->parents.push_back(std::move(t.node_));
    }
  }
  return Tensor(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() noexcept { return t_grad_enabled; }

// ---------------------------------------------------------------------------
// Backward

void backward(const Tensor& loss, bool accumulate) {
  if (!loss.defined()) throw std::logic_error("backward on undefined tensor");
  if (loss.numel() != 1) throw ShapeError("backward", "numel (loss must be scalar)", 1, loss.numel());
  if (!loss.requires_grad()) throw std::logic_error("backward: loss does not depend on any tensor requiring grad");

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node_.get(), 0);
  visited.insert(loss.node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* node : order) {
    const bool leaf = !node->backward;
    if (!leaf || !accumulate || node->grad.size() != node->value.size()) {
      node->grad.assign(node->value.size(), 0.0);
    }
  }
  loss.node_->grad[0] += 1.0;

  std::vector<std::span<double>> grad_in;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->backward) continue;
    grad_in.clear();
    for (const auto& parent : node->parents) {
      grad_in.push_back(parent->requires_grad ? std::span<double>(parent->grad) : std::span<double>());
    }
    node->backward(node->grad, grad_in);
    std::vector<double>().swap(node->grad);
  }
}

// ---------------------------------------------------------------------------
// Convolution kernels

namespace kernels {
namespace {

template <class Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Scalar>
using StridedMap = Eigen::Map<RowMatrix<Scalar>, 0, Eigen::OuterStride<>>;
template <class Scalar>
using ConstStridedMap = Eigen::Map<const RowMatrix<Scalar>, 0, Eigen::OuterStride<>>;

constexpr std::size_t kTileColumns = 4096;

std::size_t tile_rows(std::size_t out_w, std::size_t out_h) {
  return std::clamp<std::size_t>(kTileColumns / std::max<std::size_t>(out_w, 1), 1, out_h);
}

// col[k, (y - y0) * out_w + x] = input[ci, y + ky - p, x + kx - p], zero outside.
template <class Scalar>
void im2col(const Scalar* image, const Shape& in, const ConvSpec& spec, std::size_t out_w, std::size_t y0,
            std::size_t rows, Scalar* col) {
  const std::size_t cols = rows * out_w;
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);
  const auto in_h = static_cast<std::ptrdiff_t>(in.h);
  const auto in_w = static_cast<std::ptrdiff_t>(in.w);
  std::size_t k = 0;
  for (std::size_t ci = 0; ci < in.c; ++ci) {
    const Scalar* plane = image + ci * in.plane();
    for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < spec.kernel_w; ++kx, ++k) {
        Scalar* dst = col + k * cols;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        const std::ptrdiff_t x_begin = std::clamp<std::ptrdiff_t>(-dx, 0, static_cast<std::ptrdiff_t>(out_w));
        const std::ptrdiff_t x_end = std::clamp<std::ptrdiff_t>(in_w - dx, 0, static_cast<std::ptrdiff_t>(out_w));
        for (std::size_t r = 0; r < rows; ++r) {
          Scalar* line = dst + r * out_w;
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y0 + r + ky) - pad;
          if (sy < 0 || sy >= in_h || x_begin >= x_end) {
            std::fill(line, line + out_w, Scalar(0));
            continue;
          }
          const Scalar* src = plane + sy * in_w + dx;
          std::fill(line, line + x_begin, Scalar(0));
          std::copy(src + x_begin, src + x_end, line + x_begin);
          std::fill(line + x_end, line + out_w, Scalar(0));
        }
      }
    }
  }
}

void col2im_add(const double* col, const Shape& in, const ConvSpec& spec, std::size_t out_w, std::size_t y0,
                std::size_t rows, double* image) {
  const std::size_t cols = rows * out_w;
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);
  const auto in_h = static_cast<std::ptrdiff_t>(in.h);
  const auto in_w = static_cast<std::ptrdiff_t>(in.w);
  std::size_t k = 0;
  for (std::size_t ci = 0; ci < in.c; ++ci) {
    double* plane = image + ci * in.plane();
    for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < spec.kernel_w; ++kx, ++k) {
        const double* src_row = col + k * cols;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        const std::ptrdiff_t x_begin = std::clamp<std::ptrdiff_t>(-dx, 0, static_cast<std::ptrdiff_t>(out_w));
        const std::ptrdiff_t x_end = std::clamp<std::ptrdiff_t>(in_w - dx, 0, static_cast<std::ptrdiff_t>(out_w));
        for (std::size_t r = 0; r < rows; ++r) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y0 + r + ky) - pad;
          if (sy < 0 || sy >= in_h) continue;
          const double* line = src_row + r * out_w;
          double* dst = plane + sy * in_w + dx;
          for (std::ptrdiff_t x = x_begin; x < x_end; ++x) dst[x] += line[x];
        }
      }
    }
  }
}

void check_conv_operands(const Shape& input, std::size_t weight_numel, std::size_t bias_numel,
                         const ConvSpec& spec) {
  spec.validate();
  if (input.c != spec.in_channels) throw ShapeError("conv2d", "c", spec.in_channels, input.c);
  if (weight_numel != spec.weight_shape().numel())
    throw ShapeError("conv2d", "weight numel", spec.weight_shape().numel(), weight_numel);
  if (bias_numel != spec.out_channels) throw ShapeError("conv2d", "bias numel", spec.out_channels, bias_numel);
  if (input.h + 2 * spec.padding < spec.kernel_h)
    throw ShapeError("conv2d", "h (smaller than kernel)", spec.kernel_h, input.h + 2 * spec.padding);
  if (input.w + 2 * spec.padding < spec.kernel_w)
    throw ShapeError("conv2d", "w (smaller than kernel)", spec.kernel_w, input.w + 2 * spec.padding);
}

}  // namespace

template <class Scalar>
void conv2d_forward(std::span<const Scalar> input, const Shape& in, std::span<const Scalar> weight,
                    std::span<const Scalar> bias, const ConvSpec& spec, std::span<Scalar> out) {
  check_conv_operands(in, weight.size(), bias.size(), spec);
  const Shape os = spec.output_shape(in);
  if (out.size() != os.numel()) throw ShapeError("conv2d", "output numel", os.numel(), out.size());
  if (input.size() != in.numel()) throw ShapeError("conv2d", "input numel", in.numel(), input.size());

  const std::size_t k_dim = spec.fan_in();
  const std::size_t rows_per_tile = tile_rows(os.w, os.h);
  std::vector<Scalar> col(k_dim * rows_per_tile * os.w);
  Eigen::Map<const RowMatrix<Scalar>> w_mat(weight.data(), static_cast<Eigen::Index>(spec.out_channels),
                                            static_cast<Eigen::Index>(k_dim));
  Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> b_vec(bias.data(),
                                                                 static_cast<Eigen::Index>(spec.out_channels));

  for (std::size_t n = 0; n < in.n; ++n) {
    const Scalar* image = input.data() + n * in.c * in.plane();
    Scalar* out_image = out.data() + n * os.c * os.plane();
    for (std::size_t y0 = 0; y0 < os.h; y0 += rows_per_tile) {
      const std::size_t rows = std::min(rows_per_tile, os.h - y0);
      const std::size_t cols = rows * os.w;
      im2col(image, in, spec, os.w, y0, rows, col.data());
      Eigen::Map<const RowMatrix<Scalar>> col_mat(col.data(), static_cast<Eigen::Index>(k_dim),
                                                  static_cast<Eigen::Index>(cols));
      StridedMap<Scalar> out_mat(out_image + y0 * os.w, static_cast<Eigen::Index>(os.c),
                                 static_cast<Eigen::Index>(cols),
                                 Eigen::OuterStride<>(static_cast<Eigen::Index>(os.plane())));
      out_mat.noalias() = w_mat * col_mat;
      out_mat.colwise() += b_vec;
    }
  }
}

template void conv2d_forward<float>(std::span<const float>, const Shape&, std::span<const float>,
                                    std::span<const float>, const ConvSpec&, std::span<float>);
template void conv2d_forward<double>(std::span<const double>, const Shape&, std::span<const double>,
                                     std::span<const double>, const ConvSpec&, std::span<double>);

void conv2d_backward(std::span<const double> input, const Shape& in, std::span<const double> weight,
                     const ConvSpec& spec, std::span<const double> grad_out, std::span<double> grad_input,
                     std::span<double> grad_weight, std::span<double> grad_bias) {
  const Shape os = spec.output_shape(in);
  const std::size_t k_dim = spec.fan_in();
  const std::size_t rows_per_tile = tile_rows(os.w, os.h);
  std::vector<double> col(k_dim * rows_per_tile * os.w);
  const auto oc = static_cast<Eigen::Index>(spec.out_channels);
  const auto kd = static_cast<Eigen::Index>(k_dim);
  Eigen::Map<const RowMatrix<double>> w_mat(weight.data(), oc, kd);

  for (std::size_t n = 0; n < in.n; ++n) {
    const double* image = input.data() + n * in.c * in.plane();
    const double* g_image = grad_out.data() + n * os.c * os.plane();
    for (std::size_t y0 = 0; y0 < os.h; y0 += rows_per_tile) {
      const std::size_t rows = std::min(rows_per_tile, os.h - y0);
      const auto cols = static_cast<Eigen::Index>(rows * os.w);
      ConstStridedMap<double> g_mat(g_image + y0 * os.w, oc, cols,
                                    Eigen::OuterStride<>(static_cast<Eigen::Index>(os.plane())));
      if (!grad_bias.empty()) {
        // Plain loop: Eigen's vectorised row sum changes association with
        // pointer alignment, which breaks bit-exact resume.
        for (Eigen::Index o = 0; o < oc; ++o) {
          const double* row = g_image + y0 * os.w + static_cast<std::size_t>(o) * os.plane();
          double acc = 0.0;
          for (Eigen::Index j = 0; j < cols; ++j) acc += row[j];
          grad_bias[static_cast<std::size_t>(o)] += acc;
        }
      }
      if (!grad_weight.empty()) {
        im2col(image, in, spec, os.w, y0, rows, col.data());
        Eigen::Map<const RowMatrix<double>> col_mat(col.data(), kd, cols);
        Eigen::Map<RowMatrix<double>> gw(grad_weight.data(), oc, kd);
        gw.noalias() += g_mat * col_mat.transpose();
      }
      if (!grad_input.empty()) {
        Eigen::Map<RowMatrix<double>> col_mat(col.data(), kd, cols);
        col_mat.noalias() = w_mat.transpose() * g_mat;
        col2im_add(col.data(), in, spec, os.w, y0, rows, grad_input.data() + n * in.c * in.plane());
      }
    }
  }
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Operations

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, const ConvSpec& spec) {
  const Shape& in = input.shape();
  spec.validate();
  if (in.c != spec.in_channels) throw ShapeError("conv2d", "c", spec.in_channels, in.c);
  const Shape ws = spec.weight_shape();
  const Shape& wa = weight.shape();
  if (wa.n != ws.n) throw ShapeError("conv2d", "weight out_channels", ws.n, wa.n);
  if (wa.c != ws.c) throw ShapeError("conv2d", "weight in_channels", ws.c, wa.c);
  if (wa.h != ws.h) throw ShapeError("conv2d", "weight kernel_h", ws.h, wa.h);
  if (wa.w != ws.w) throw ShapeError("conv2d", "weight kernel_w", ws.w, wa.w);
  if (bias.numel() != spec.out_channels) throw ShapeError("conv2d", "bias out_channels", spec.out_channels, bias.numel());

  const Shape os = spec.output_shape(in);
  std::vector<double> out(os.numel());
  kernels::conv2d_forward<double>(input.values(), in, weight.values(), bias.values(), spec, out);

  return Tensor::make_result(
      os, std::move(out), {input, weight, bias},
      [input, weight, spec](std::span<const double> g, std::span<const std::span<double>> gi) {
        kernels::conv2d_backward(input.values(), input.shape(), weight.values(), spec, g, gi[0], gi[1], gi[2]);
      });
}

Tensor relu(const Tensor& input) {
  const auto x = input.values();
  std::vector<double> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), [](double v) { return v > 0.0 ? v : 0.0; });
  return Tensor::make_result(input.shape(), std::move(out), {input},
                             [input](std::span<const double> g, std::span<const std::span<double>> gi) {
                               const auto x = input.values();
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 if (x[i] > 0.0) gi[0][i] += g[i];
                               }
                             });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a.shape(), b.shape());
  const auto x = a.values();
  const auto y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b},
                             [](std::span<const double> g, std::span<const std::span<double>> gi) {
                               for (const auto& dst : gi) {
                                 if (dst.empty()) continue;
                                 for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                               }
                             });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a.shape(), b.shape());
  const auto x = a.values();
  const auto y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b},
                             [](std::span<const double> g, std::span<const std::span<double>> gi) {
                               if (!gi[0].empty())
                                 for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                               if (!gi[1].empty())
                                 for (std::size_t i = 0; i < g.size(); ++i) gi[1][i] -= g[i];
                             });
}

Tensor scale(const Tensor& a, double s) {
  const auto x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = s * x[i];
  return Tensor::make_result(a.shape(), std::move(out), {a},
                             [s](std::span<const double> g, std::span<const std::span<double>> gi) {
                               for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += s * g[i];
                             });
}

Tensor lerp(const Tensor& a, const Tensor& b, double alpha) {
  check_same_shape("lerp", a.shape(), b.shape());
  const double beta = 1.0 - alpha;
  const auto x = a.values();
  const auto y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = alpha * x[i] + beta * y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b},
                             [alpha, beta](std::span<const double> g, std::span<const std::span<double>> gi) {
                               if (!gi[0].empty())
                                 for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += alpha * g[i];
                               if (!gi[1].empty())
                                 for (std::size_t i = 0; i < g.size(); ++i) gi[1][i] += beta * g[i];
                             });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n) throw ShapeError("concat_channels", "n", sa.n, sb.n);
  if (sa.h != sb.h) throw ShapeError("concat_channels", "h", sa.h, sb.h);
  if (sa.w != sb.w) throw ShapeError("concat_channels", "w", sa.w, sb.w);
  const Shape os{sa.n, sa.c + sb.c, sa.h, sa.w};
  const std::size_t block_a = sa.c * sa.plane();
  const std::size_t block_b = sb.c * sb.plane();
  std::vector<double> out(os.numel());
  const auto x = a.values();
  const auto y = b.values();
  for (std::size_t n = 0; n < sa.n; ++n) {
    auto dst = out.begin() + static_cast<std::ptrdiff_t>(n * (block_a + block_b));
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(n * block_a), block_a, dst);
    std::copy_n(y.begin() + static_cast<std::ptrdiff_t>(n * block_b), block_b,
                dst + static_cast<std::ptrdiff_t>(block_a));
  }
  return Tensor::make_result(
      os, std::move(out), {a, b},
      [block_a, block_b, batch = sa.n](std::span<const double> g, std::span<const std::span<double>> gi) {
        for (std::size_t n = 0; n < batch; ++n) {
          const double* src = g.data() + n * (block_a + block_b);
          if (!gi[0].empty())
            for (std::size_t i = 0; i < block_a; ++i) gi[0][n * block_a + i] += src[i];
          if (!gi[1].empty())
            for (std::size_t i = 0; i < block_b; ++i) gi[1][n * block_b + i] += src[block_a + i];
        }
      });
}

namespace {

Tensor channel_slice(const Tensor& t, std::size_t begin, std::size_t count) {
  const Shape& s = t.shape();
  const Shape os{s.n, count, s.h, s.w};
  const std::size_t block = count * s.plane();
  const std::size_t stride = s.c * s.plane();
  const std::size_t offset = begin * s.plane();
  std::vector<double> out(os.numel());
  const auto x = t.values();
  for (std::size_t n = 0; n < s.n; ++n) {
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(n * stride + offset), block,
                out.begin() + static_cast<std::ptrdiff_t>(n * block));
  }
  return Tensor::make_result(
      os, std::move(out), {t},
      [block, stride, offset, batch = s.n](std::span<const double> g, std::span<const std::span<double>> gi) {
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t i = 0; i < block; ++i) gi[0][n * stride + offset + i] += g[n * block + i];
      });
}

}  // namespace

std::pair<Tensor, Tensor> split_channels(const Tensor& t, std::size_t first_channels) {
  const Shape& s = t.shape();
  if (first_channels == 0 || first_channels >= s.c)
    throw ShapeError("split_channels", "c (split point)", s.c - 1, first_channels);
  return {channel_slice(t, 0, first_channels), channel_slice(t, first_channels, s.c - first_channels)};
}

Tensor frobenius_sq(const Tensor& a) {
  const auto x = a.values();
  double total = 0.0;
  for (double v : x) total += v * v;
  return Tensor::make_result({1, 1, 1, 1}, {total}, {a},
                             [a](std::span<const double> g, std::span<const std::span<double>> gi) {
                               const auto x = a.values();
                               const double s = 2.0 * g[0];
                               for (std::size_t i = 0; i < x.size(); ++i) gi[0][i] += s * x[i];
                             });
}

Tensor sample_frobenius_norm(const Tensor& a) {
  const Shape& s = a.shape();
  const std::size_t block = s.c * s.plane();
  const auto x = a.values();
  std::vector<double> norms(s.n);
  for (std::size_t n = 0; n < s.n; ++n) {
    double total = 0.0;
    for (std::size_t i = 0; i < block; ++i) total += x[n * block + i] * x[n * block + i];
    norms[n] = std::sqrt(total);
  }
  std::vector<double> saved = norms;
  return Tensor::make_result(
      {s.n, 1, 1, 1}, std::move(norms), {a},
      [a, block, saved = std::move(saved)](std::span<const double> g, std::span<const std::span<double>> gi) {
        const auto x = a.values();
        for (std::size_t n = 0; n < saved.size(); ++n) {
          if (saved[n] == 0.0) continue;
          const double s = g[n] / saved[n];
          for (std::size_t i = 0; i < block; ++i) gi[0][n * block + i] += s * x[n * block + i];
        }
      });
}

Tensor sum(const Tensor& a) {
  const auto x = a.values();
  double total = 0.0;
  for (double v : x) total += v;
  return Tensor::make_result({1, 1, 1, 1}, {total}, {a},
                             [](std::span<const double> g, std::span<const std::span<double>> gi) {
                               for (double& v : gi[0]) v += g[0];
                             });
}

Tensor mean(const Tensor& a) {
  const auto x = a.values();
  double total = 0.0;
  for (double v : x) total += v;
  const double k = static_cast<double>(x.size());
  return Tensor::make_result({1, 1, 1, 1}, {total / k}, {a},
                             [k](std::span<const double> g, std::span<const std::span<double>> gi) {
                               const double d = g[0] / k;
                               for (double& v : gi[0]) v += d;
                             });
}

}  // namespace cmudrn
