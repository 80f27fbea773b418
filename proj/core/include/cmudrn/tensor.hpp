#pragma once

// Dense rank-4 (n, c, h, w) tensors with define-by-run reverse-mode autodiff.
//
// A Tensor is a shared handle to a graph node. Operations on tensors that
// require gradients record their inputs and a backward closure; `backward()`
// walks the recorded graph in reverse topological order. Graphs are rebuilt
// on every forward pass and are confined to the thread that built them.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cmudrn {

struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  constexpr std::size_t numel() const noexcept { return n * c * h * w; }
  constexpr std::size_t plane() const noexcept { return h * w; }
  constexpr std::size_t index(std::size_t in, std::size_t ic, std::size_t iy, std::size_t ix) const noexcept {
    return ((in * c + ic) * h + iy) * w + ix;
  }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;
  std::string str() const;
};

/// Stride is always 1. Output spatial size is (h + 2p - kh + 1, w + 2p - kw + 1),
/// so `same(in, out, k)` with odd k preserves (h, w).
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t padding = 1;

  static ConvSpec same(std::size_t in, std::size_t out, std::size_t kernel = 3) {
    return {in, out, kernel, kernel, kernel / 2};
  }
  Shape weight_shape() const { return {out_channels, in_channels, kernel_h, kernel_w}; }
  Shape bias_shape() const { return {out_channels, 1, 1, 1}; }
  std::size_t fan_in() const { return in_channels * kernel_h * kernel_w; }
  Shape output_shape(const Shape& input) const;
  /// Throws ShapeError if zero-sized or if a kernel side is even.
  void validate() const;
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

namespace detail {
struct Node;
}

/// Called during backward with the gradient of the node's output and one
/// writable span per input. Spans for inputs that do not require gradients are
/// empty. Implementations must accumulate (+=), never assign.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<const std::span<double>> grad_in)>;

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from_values(const Shape& shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t numel() const { return shape().numel(); }

  std::span<const double> values() const;
  /// Writable view of the data. Mutating a tensor that already feeds a live
  /// graph invalidates that graph's gradients.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();
  void clear_grad();

  /// Deep copy of the values with no graph history.
  Tensor detach() const;
  /// Deep copy preserving requires_grad; used to clone parameter sets.
  Tensor clone() const;

  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

  /// Builds the output of a differentiable operation. When gradient recording
  /// is enabled and any input requires gradients, the result keeps `inputs`
  /// alive and runs `fn` during backward.
  static Tensor make_result(const Shape& shape, std::vector<double> values, std::vector<Tensor> inputs,
                            BackwardFn fn);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend void backward(const Tensor& loss, bool accumulate);

  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

/// Reverse-mode accumulation from a single-element tensor. Gradients of leaves
/// reached by this graph are reset first unless `accumulate` is set.
/// Intermediate (non-leaf) gradients are released once propagated.
void backward(const Tensor& loss, bool accumulate = false);

// Operations. All are differentiable with respect to every tensor argument.

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, const ConvSpec& spec);
Tensor relu(const Tensor& input);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// alpha * a + (1 - alpha) * b, elementwise.
Tensor lerp(const Tensor& a, const Tensor& b, double alpha);
/// (n, ca, h, w) ++ (n, cb, h, w) -> (n, ca + cb, h, w), a's channels first.
Tensor concat_channels(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> split_channels(const Tensor& t, std::size_t first_channels);
/// Sum of squares; returns a single-element tensor.
Tensor frobenius_sq(const Tensor& a);
/// Per-sample Frobenius norm, shape (n, 1, 1, 1). The gradient at an
/// all-zero sample is defined as zero.
Tensor sample_frobenius_norm(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

}  // namespace cmudrn
